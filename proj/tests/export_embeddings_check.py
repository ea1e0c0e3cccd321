"""End-to-end check of tools/export_embeddings.py against the C++ lookup.

Builds a tiny randomly initialised BERT and its tokenizer offline,
exports features for a small instance store, then trains through the CLI
with encoder.embeddings pointing at the export. Every pair must be found.

usage: export_embeddings_check.py <harch binary> <source dir> <work dir>
"""

import json
import os
import shutil
import subprocess
import sys

try:
    import torch  # noqa: F401
    from transformers import BertConfig, BertModel, BertTokenizerFast
except ImportError:
    print("transformers/torch not available")
    sys.exit(77)

harch, source, work = sys.argv[1:4]
shutil.rmtree(work, ignore_errors=True)
os.makedirs(work)
sys.path.insert(0, os.path.join(source, "tools"))
import export_embeddings  # noqa: E402

# FNV-1a reference vectors shared with the C++ tests.
assert export_embeddings.fnv1a64_hex("") == "cbf29ce484222325"
assert export_embeddings.fnv1a64_hex("a") == "af63dc4c8601ec8c"
assert export_embeddings.fnv1a64_hex("foobar") == "85944171f73967e8"

words = [f"w{i}" for i in range(40)] + ["é", "ß"]
vocab = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"] + words
with open(os.path.join(work, "vocab.txt"), "w", encoding="utf-8") as f:
    f.write("\n".join(vocab) + "\n")
model_dir = os.path.join(work, "tiny-bert")
tok = BertTokenizerFast(os.path.join(work, "vocab.txt"), do_lower_case=False)
tok.save_pretrained(model_dir)
torch.manual_seed(0)
BertModel(BertConfig(vocab_size=len(vocab), hidden_size=8, num_hidden_layers=1, num_attention_heads=2,
                     intermediate_size=16)).save_pretrained(model_dir)
assert export_embeddings.pair_boundary(tok) == " [SEP] "

level3 = [0.0] * 28
store = os.path.join(work, "instances.jsonl")
with open(store, "w", encoding="utf-8") as f:
    for i in range(24):
        gold = list(level3)
        gold[i % 28] = 0.5
        gold[(i * 7 + 3) % 28] += 0.5
        lang = "eng" if i % 2 else "ger"
        split = "test" if i % 4 == 0 else "train"
        rec = {"item_id": str(i), "language": lang, "split": split, "source": "discogem2",
               "arg1": f"w{i} w{i + 1} é", "arg2": f"w{i + 2} ß w{i % 5}", "level1": [], "level2": [], "level3": gold}
        f.write(json.dumps(rec, ensure_ascii=False) + "\n")

features = os.path.join(work, "features.jsonl")
export_embeddings.main([store, features, "--identifier", "tiny-bert", "--model", model_dir, "--batch-size", "5"])
with open(features, encoding="utf-8") as f:
    header = json.loads(f.readline())
    rows = [json.loads(line) for line in f]
assert header["dim"] == 8 and header["pooling"] == "first", header
assert len(rows) == 24, len(rows)

out = os.path.join(work, "run")
cmd = [harch, "train", "--set", f"data.corpus={store}", "encoder.identifier=tiny-bert", f"encoder.embeddings={features}",
       "train.epochs=2", "train.learning_rate=1e-3", "--freeze-encoder", "--seeds", "1", "--out", out]
result = subprocess.run(cmd, capture_output=True, text=True)
if result.returncode != 0:
    print(result.stdout, result.stderr)
    sys.exit(1)
report = json.load(open(os.path.join(out, "eval_report.json")))
assert report["model_id"] == "tiny-bert-HArch", report["model_id"]
print("export and lookup agree on", len(rows), "pairs")
