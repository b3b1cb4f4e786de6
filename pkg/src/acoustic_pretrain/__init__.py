from .models import Manifest, ScoreSet, Spectrogram, UtteranceClass, Waveform

__all__ = ["Manifest", "ScoreSet", "Spectrogram", "UtteranceClass", "Waveform"]
