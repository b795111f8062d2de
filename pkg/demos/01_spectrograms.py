# # Spectrograms of a synthetic bird scene
#
# Build one 10 s scene with a few chirps over pink noise, turn it into a
# spectrogram and look at the input variants the networks can be fed.

# %%
import numpy as np

from birdtag import dsp, synth

spec = synth.random_scene_spec(5, positive=True)
clip, truth = synth.generate_scene(spec)
print(f"{clip.duration:.1f} s at {clip.sample_rate} Hz, {len(truth.boxes)} events")
for ev in spec.events:
    print(f"  {ev.shape:14s} {ev.t_start:5.2f}-{ev.t_end:5.2f} s  {ev.f_start:6.0f} -> {ev.f_end:6.0f} Hz")

# %%
# A 512-sample Hamming window with hop 706 gives exactly 256 bins by 624 frames.

lin = dsp.stft_spectrogram(clip, scale="linear")
db = dsp.to_db(lin)
print("linear", lin.shape, "dB range", round(db.values.min(), 1), "to", round(db.values.max(), 1))

# %%
# Three variants: mean-subtracted log magnitude (each frequency row centred),
# a mel-smoothed reconstruction, and a 224x224 bilinear resize.

centred = dsp.mean_subtract(db)
print("row means after centring:", float(np.abs(centred.values.mean(axis=1)).max()))

mel = dsp.mel_reconstruct(lin, dsp.mel_filterbank(n_mels=64))
rough = lambda v: float(np.abs(np.diff(v, axis=0)).mean())
print("frequency roughness linear vs mel:", round(rough(lin.values), 5), round(rough(mel.values), 5))

print("resized", dsp.resize_bilinear(db, 224, 224).shape)

# %%
# The networks work on a 64x64 grid. Block-max pooling keeps a 0.1 s chirp
# (about 6 frames) visible, where point-sampled shrinking can step over it.

x = dsp.network_input(lin)
grid_truth = dsp.pool_max(truth.mask, 64, 64)
print("network input", x.shape, "truth cells set", int(grid_truth.sum()))
print("mean input inside truth cells", round(float(x[0][grid_truth].mean()), 2),
      "outside", round(float(x[0][~grid_truth].mean()), 2))
