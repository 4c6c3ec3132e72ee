"""Fisher information of a trapped-atom gravimeter with Doppler-broadened Raman pulses."""

__version__ = "0.1.0"
