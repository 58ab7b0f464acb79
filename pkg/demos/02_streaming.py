"""Frame-in, frame-out inference and what it costs per frame.

The stream path keeps one (h, c) pair per LSTM layer plus the pending
overlap-add tail, and emits 128 new samples for every 512-sample frame.

Run: python3 demos/02_streaming.py
"""
import time

import numpy as np

from dtln.cli import run_bench
from dtln.data import mix_at_snr
from dtln.models import TOPOLOGIES, build_model, count_params, enhance, init_stream_state, step_frame
from dtln.synth import synth_noise, synth_speech
from dtln.transforms import frame_signal

for name, spec in TOPOLOGIES.items():
    p = build_model(spec)
    print(f"{name:5s} {spec.cores}  {spec.lstm_units} units  {count_params(p):,} parameters")

params = build_model("DTLN", seed=1).astype(np.float32)
speech = synth_speech(4.0, 3)
noisy, _ = mix_at_snr(speech, synth_noise(4.5, 4, "babble"), 5.0, 5)
noisy = noisy.astype(np.float32)

# one frame at a time, as an audio callback would do it
state = init_stream_state(params)
chunks = []
t0 = time.perf_counter()
for frame in frame_signal(noisy):
    hop_out, state = step_frame(params, state, frame)
    chunks.append(hop_out)
elapsed = time.perf_counter() - t0
streamed = np.concatenate(chunks)
print(f"\n{len(chunks)} frames in {elapsed:.2f} s ({1000 * elapsed / len(chunks):.2f} ms/frame, hop is 8 ms)")

# the same model over the whole sequence at once
seq = enhance(params, noisy, "sequence")
st = enhance(params, noisy, "stream")
print("sequence vs stream, length-preserving:", len(seq) == len(noisy), np.max(np.abs(seq - st)))

for mode in ("stream", "sequence"):
    print()
    print(run_bench(params, 5.0, mode).as_text())
