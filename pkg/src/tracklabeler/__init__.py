"""Label engine for multi-object tracking.

Validates detections and associates identities with a hierarchical track
graph, bootstraps training labels from its own solver output, and spends a
click-priced annotation budget where the model is least certain.
"""

__version__ = "0.1.0"
