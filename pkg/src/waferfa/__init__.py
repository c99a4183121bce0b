"""waferfa: desk-scale semiconductor failure-analysis engine.

Subpackages cover the SECS-II/HSMS equipment link, a scriptable equipment
simulator, telemetry storage with anomaly detection, procedural wafer-map
synthesis, feature extraction and a trainable defect classifier, exact
cosine retrieval over historical cases, and the five-node report pipeline.
"""

__version__ = "0.1.0"
