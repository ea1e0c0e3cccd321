#!/usr/bin/env python3
"""Export pooled pair encodings from a Hugging Face encoder for `harch`.

Reads an instance store (the instances.jsonl written by `harch prepare`) and
writes a feature file that `encoder.embeddings` can point at:

    {"identifier": ..., "dim": ..., "boundary": ..., "pooling": ..., "max_length": ...}
    {"key": "<fnv1a64 hex of ARG1 + boundary + ARG2>", "vector": [...]}
    ...

Example:
    python tools/export_embeddings.py runs/prepare/instances.jsonl \
        features/roberta-base.jsonl --identifier roberta-base --model FacebookAI/roberta-base
"""

import argparse
import json
import logging
import sys

import torch
from transformers import AutoModel, AutoTokenizer

log = logging.getLogger("export_embeddings")

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def fnv1a64_hex(text: str) -> str:
    h = FNV_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return f"{h:016x}"


def pair_boundary(tokenizer) -> str:
    """Special tokens the tokenizer puts between two segments, as text.

    Falls back to a single space for tokenizers without a pair template
    (T5-style encoders).
    """
    a = tokenizer("a", add_special_tokens=False)["input_ids"]
    b = tokenizer("b", add_special_tokens=False)["input_ids"]
    ids = tokenizer("a", "b")["input_ids"]
    start = next((i + len(a) for i in range(len(ids)) if ids[i:i + len(a)] == a), None)
    if start is None:
        return " "
    end = next((i for i in range(start, len(ids)) if ids[i:i + len(b)] == b), None)
    if end is None or end == start:
        return " "
    return " " + "".join(tokenizer.convert_ids_to_tokens(ids[start:end])) + " "


def resolve_pooling(requested: str, model) -> str:
    if requested != "auto":
        return requested
    # Encoder-decoder backbones have no sequence-summary token.
    return "mean" if getattr(model.config, "is_encoder_decoder", False) else "first"


def load_pairs(path):
    pairs = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            if not record["arg1"] or not record["arg2"]:
                sys.exit(f"{path}:{line_no}: item {record['item_id']} has an empty argument")
            pairs.append((record["arg1"], record["arg2"]))
    return pairs


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("instances", help="instance store (.jsonl)")
    parser.add_argument("output", help="feature file to write")
    parser.add_argument("--identifier", required=True, help="must match encoder.identifier in the run config")
    parser.add_argument("--model", help="Hugging Face model name or local path (default: --identifier)")
    parser.add_argument("--pooling", choices=["auto", "first", "mean"], default="auto")
    parser.add_argument("--max-length", type=int, default=512)
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument("--device", default="cuda" if torch.cuda.is_available() else "cpu")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")

    name = args.model or args.identifier
    tokenizer = AutoTokenizer.from_pretrained(name)
    model = AutoModel.from_pretrained(name)
    if getattr(model.config, "is_encoder_decoder", False):
        model = model.get_encoder()
    model.to(args.device).eval()

    boundary = pair_boundary(tokenizer)
    pooling = resolve_pooling(args.pooling, model)
    texts = {}
    for arg1, arg2 in load_pairs(args.instances):
        text = arg1 + boundary + arg2
        texts.setdefault(fnv1a64_hex(text), text)
    log.info("%d distinct pairs, boundary %r, pooling %s", len(texts), boundary, pooling)

    keys = list(texts)
    dim = model.config.hidden_size if hasattr(model.config, "hidden_size") else model.config.d_model
    with open(args.output, "w", encoding="utf-8") as out:
        header = {"identifier": args.identifier, "dim": dim, "boundary": boundary, "pooling": pooling,
                  "max_length": args.max_length}
        out.write(json.dumps(header) + "\n")
        with torch.no_grad():
            for start in range(0, len(keys), args.batch_size):
                chunk = keys[start:start + args.batch_size]
                enc = tokenizer([texts[k] for k in chunk], padding=True, truncation=True,
                                max_length=args.max_length, return_tensors="pt").to(args.device)
                hidden = model(**enc).last_hidden_state
                if pooling == "first":
                    pooled = hidden[:, 0]
                else:
                    mask = enc["attention_mask"].unsqueeze(-1).to(hidden.dtype)
                    pooled = (hidden * mask).sum(1) / mask.sum(1)
                for key, vec in zip(chunk, pooled.double().cpu().tolist()):
                    out.write(json.dumps({"key": key, "vector": vec}) + "\n")
                log.info("%d/%d", min(start + args.batch_size, len(keys)), len(keys))


if __name__ == "__main__":
    main()
