"""Text and visual feature extractors."""
