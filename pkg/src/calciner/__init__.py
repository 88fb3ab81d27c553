"""Dynamic plug-flow model of a flash clay calciner."""
