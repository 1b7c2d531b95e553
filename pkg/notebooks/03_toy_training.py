"""
Baseline versus SGE on the synthetic glyph task
===============================================

Each image holds one class glyph among fragments of other glyphs, with a
random brightness gain. Both models see the same split and the same
initial conv weights. Pass an epoch count to shorten the run.
"""
import sys
from dataclasses import replace

from sge import experiments as ex
from sge.data import make_datasets
from sge.train import substream_seed

epochs = int(sys.argv[1]) if len(sys.argv) > 1 else ex.TOY_TRAIN.epochs
seed = 0
config = replace(ex.TOY_TRAIN, epochs=epochs)
datasets = make_datasets(replace(ex.TOY_DATA, seed=substream_seed(seed, "data")))
print("train/test sizes:", len(datasets[0]), len(datasets[1]))

results = {}
for label, spec in [("none", ex.RunSpec(attention="none", seed=seed)), ("sge", ex.RunSpec(seed=seed))]:
    results[label] = ex.run(spec, train_config=config, datasets=datasets)
    print(f"{label:5s} test accuracy {results[label].test_accuracy:.4f}")

# learning curves live in the report
for epoch, split, loss, acc in results["sge"].report.rows:
    if split == "test":
        print(f"epoch {epoch:2d} loss {loss:.3f} acc {acc:.3f}")

# what the SGE layer learned
model = results["sge"].model
sge = model.layers[model.sge_layers()[0]]
print("gamma:", sge.params["gamma"].round(2))
print("beta: ", sge.params["beta"].round(2))
