# Grade-wise training versus end-to-end training, desk scale.
#
# The trained counterpart of the constructive pipeline: each grade adds a
# two-layer block plus an affine readout, trained by Adam on the residual of
# everything before it while earlier blocks stay frozen.  The baseline is a
# fully connected net of the same total depth/width trained end to end for
# the same epoch budget.  Expect a visible drop at each grade boundary and a
# better final error for the grade-wise run; this small setup mirrors the
# full-scale phenomenology, not its magnitudes.

from multigrade import (TrainConfig, f1_target, fcnn_train, make_dataset,
                        mgdl_train)

target = f1_target()
cfg = TrainConfig(grades=4, width=32, epochs_per_grade=(50, 100, 200, 450),
                  batch_size=400, seed=0)
train = make_dataset(target, 2000, seed=7000)
test = make_dataset(target, 1000, seed=9000)

print(f"training {cfg.grades} grades (width {cfg.width}, "
      f"{cfg.total_epochs} epochs total) ...")
mg_model, mg_trace = mgdl_train(train, test, cfg)

print("grade-wise run:")
start = 0
for g, end in enumerate(mg_trace.grade_boundaries, start=1):
    first = mg_trace.per_epoch[start]
    last = mg_trace.per_epoch[end - 1]
    print(f"  grade {g}: train MSE {first.train_mse:.4f} -> {last.train_mse:.4f}"
          f"   test MSE {last.test_mse:.4f}   test max {last.test_max:.4f}")
    start = end

fc_model, fc_trace = fcnn_train(train, test, cfg)
print("end-to-end baseline (same budget):")
last = fc_trace.per_epoch[-1]
print(f"  train MSE {last.train_mse:.4f}   test MSE {last.test_mse:.4f}   "
      f"test max {last.test_max:.4f}")

mg_final = mg_trace.per_epoch[-1].test_mse
print(f"\nfinal test MSE: grade-wise {mg_final:.4f} vs end-to-end "
      f"{last.test_mse:.4f}")

mg_trace.write_csv("/tmp/mgdl_trace.csv")
fc_trace.write_csv("/tmp/fcnn_trace.csv")
print("traces written to /tmp/mgdl_trace.csv and /tmp/fcnn_trace.csv;")
print("render them with: python demos/plot_traces.py /tmp/mgdl_trace.csv /tmp/fcnn_trace.csv")
