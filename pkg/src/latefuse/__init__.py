"""Late fusion of multi-source BEV detections."""
