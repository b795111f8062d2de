"""Bird-vocalization tagging on spectrograms: blind blob segmentation,
attention boxes from a toy classifier, and toy U-net masks."""
__version__ = "0.1.0"
