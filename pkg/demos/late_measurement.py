"""Follow one track through synchronous, late and early measurements.

Run: python demos/late_measurement.py
"""
import numpy as np

from latefuse.kalman import X, VX, Measurement, ingest, init_track


def meas(x, t_ms, source):
    return Measurement(np.array([x, 0.0, 2.0, 4.0, 0.0]), np.eye(5) * 0.25, t_ms * 1000, source)


def show(label, state, disposition=None):
    tag = f" [{disposition.value}]" if disposition else ""
    print(f"{label:<34}{tag:<20} t_filter={state.t_filter / 1000:6.0f} ms  "
          f"x={state.x[X]:6.3f}  vx={state.x[VX]:6.3f}  snapshots={len(state.history)}")


def main():
    # an object moving at 10 m/s seen by an ego sensor (s0) and a remote agent (s1)
    s = init_track(meas(0.0, 0, "s0"))
    show("s0 at 0 ms initializes", s)
    for label, m in (("s1 at 5 ms (within tolerance)", meas(0.05, 5, "s1")),
                     ("s0 at 200 ms (ahead of filter)", meas(2.0, 200, "s0")),
                     ("s1 at 100 ms arrives late", meas(1.0, 100, "s1")),
                     ("s0 at 800 ms (beyond 500 ms)", meas(8.0, 800, "s0"))):
        s, disp, reason = ingest(s, m)
        show(label, s, disp)
        if reason:
            print(f"{'':34}reason: {reason.value}")

    print("\nProcessing the same three measurements in time order gives the same state:")
    ref = init_track(meas(0.0, 0, "s0"))
    for m in (meas(0.05, 5, "s1"), meas(1.0, 100, "s1"), meas(2.0, 200, "s0")):
        ref, _, _ = ingest(ref, m)
    show("time-ordered reference", ref)
    print(f"max |state difference| = {np.abs(ref.x - s.x).max():.2e}")


if __name__ == "__main__":
    main()
