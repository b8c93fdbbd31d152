"""Report text pipeline: summarization, labeling, report LM and name encoders."""
