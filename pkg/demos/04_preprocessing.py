"""
From a continuous recording to model-ready epochs
=================================================

Simulate a 250 Hz recording with two tones and line hum, band-pass and
notch it, resample to 128 Hz, and cut 4 s epochs around the event marks.
"""

import numpy as np

from eegvae.dsp import (CHANNEL_NAMES, RawRecording, bandpower, extract_epochs,
                        fir_filter, minmax_normalize, resample_rational)

fs0 = 250.0
t = np.arange(int(fs0 * 30)) / fs0          # 30 s recording
rng = np.random.default_rng(7)

data = rng.normal(scale=1.0, size=(22, t.size))
data += 6.0 * np.sin(2 * np.pi * 10.0 * t)  # in-band tone, should survive
data += 4.0 * np.sin(2 * np.pi * 50.0 * t)  # line hum, should vanish
events = [(int(fs0 * s), k % 4) for k, s in enumerate((2.0, 8.0, 14.0, 20.0))]
rec = RawRecording(data, fs=fs0, events=events)

filtered = fir_filter(rec, bandpass=(0.5, 40.0))
filtered = fir_filter(filtered, notch=(50.0, 4.0))     # (center, width)
resampled = resample_rational(filtered, p=64, q=125)   # 250 -> 128 Hz
print("fs after resample", resampled.fs, "samples", resampled.data.shape[1],
      "(1000 input samples map to 512)")

ch = resampled.data[0]
print(f"10 Hz power {bandpower(ch, 9, 11):.1f}  vs 50 Hz power "
      f"{bandpower(ch, 49, 51):.4f}")

epochs = extract_epochs(resampled, window_s=4.0)
print("epochs", epochs.data.shape, "labels", epochs.labels.tolist())

norm = minmax_normalize(epochs)
print("normalized extrema attained:", float(norm.data.min()), float(norm.data.max()))
print("channels:", ", ".join(CHANNEL_NAMES[:6]), "...")
