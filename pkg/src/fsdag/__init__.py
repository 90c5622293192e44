"""
fsdag: few-shot key information extraction on document graphs

Regions of an OCR'd page become graph nodes; text, visual and positional
features are fused, refined by multi-head attention message passing and
classified per node.
"""

__version__ = "0.1.0"
