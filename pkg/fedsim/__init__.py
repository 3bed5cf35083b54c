"""Simulador de aprendizaje federado multimodal."""
__version__ = "1.0.0"
