#!/usr/bin/env python3
"""Runs tools/hf_layers.py against a tiny randomly initialised BERT built
offline, then drives probing_cli through it. Exit 77 when torch or
transformers is unavailable."""
import json
import os
import struct
import subprocess
import sys
import tempfile
import zlib

try:
    import numpy as np
    import torch
    from transformers import BertConfig, BertModel, BertTokenizer
except ImportError:
    sys.exit(77)

HERE = os.path.dirname(os.path.abspath(__file__))
ADAPTER = os.path.join(HERE, "..", "tools", "hf_layers.py")
CLI = sys.argv[1]


def read_records(data):
    out, pos = [], 0
    while pos < len(data):
        assert data[pos:pos + 4] == b"LSTK"
        version, n, pieces, width, crc = struct.unpack_from("<5I", data, pos + 4)
        size = n * pieces * width * 4
        payload = data[pos + 24:pos + 24 + size]
        assert version == 1 and zlib.crc32(payload) & 0xFFFFFFFF == crc
        out.append(np.frombuffer(payload, dtype="<f4").reshape(n, pieces, width))
        pos += 24 + size
    return out


def main():
    tmp = tempfile.mkdtemp(prefix="probing-hf-")
    model_dir = os.path.join(tmp, "tiny-bert")
    words = sorted({l.split("\t")[1] for l in open(os.path.join(HERE, "data", "mini.conllu"), encoding="utf-8")
                    if l[:1].isdigit() and "\t" in l})
    vocab = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"] + words + ["##" + c for c in "abcdefghijklmnopqrstuvwxyz"]
    os.makedirs(model_dir)
    with open(os.path.join(model_dir, "vocab.txt"), "w", encoding="utf-8") as f:
        f.write("\n".join(vocab) + "\n")
    torch.manual_seed(0)
    cfg = BertConfig(vocab_size=len(vocab), hidden_size=8, num_hidden_layers=2, num_attention_heads=2,
                     intermediate_size=16, max_position_embeddings=64)
    model = BertModel(cfg)
    model.save_pretrained(model_dir)
    BertTokenizer(os.path.join(model_dir, "vocab.txt"), do_lower_case=False).save_pretrained(model_dir)

    exported = os.path.join(tmp, "vocab.txt")
    subprocess.run([sys.executable, ADAPTER, "--export-vocab", model_dir, exported], check=True)
    assert open(exported, encoding="utf-8").read().split("\n")[:len(vocab)] == vocab

    request = os.path.join(tmp, "req.jsonl")
    response = os.path.join(tmp, "resp.bin")
    with open(request, "w") as f:
        f.write(json.dumps({"pieces": [2, 7, 8, 3]}) + "\n" + json.dumps({"pieces": [2, 3]}) + "\n")
    subprocess.run([sys.executable, ADAPTER, model_dir, request, response], check=True)
    recs = read_records(open(response, "rb").read())
    assert [r.shape for r in recs] == [(3, 4, 8), (3, 2, 8)], [r.shape for r in recs]
    emb = model.get_input_embeddings().weight.detach().numpy()
    assert np.allclose(recs[0][0], emb[[2, 7, 8, 3]], atol=1e-6)
    # contextual layers differ from the lexical lookup
    assert not np.allclose(recs[0][1], recs[0][0])

    conllu = os.path.join(HERE, "data", "mini.conllu")
    config = {
        "output_dir": os.path.join(tmp, "out"), "cache_dir": os.path.join(tmp, "cache"), "seed": 1,
        "probe": {"hidden": 4, "eval_every": 4, "patience": 2, "max_batches": 12, "batch_size": 8},
        "encoders": [{"name": "tiny", "type": "command", "layers": 2, "width": 8, "max_pieces": 64,
                      "command": f"{sys.executable} {ADAPTER} {model_dir}", "vocab": exported}],
        "tasks": [{"name": "pos", "task": "POS", "format": "conllu",
                   "train": conllu, "valid": conllu, "test": conllu}],
    }
    cfg_path = os.path.join(tmp, "cfg.json")
    json.dump(config, open(cfg_path, "w"))
    subprocess.run([CLI, "run-all", cfg_path, "--log-level", "warn"], check=True)
    assert os.path.exists(os.path.join(tmp, "out", "tiny", "pos", "metrics.csv"))
    print("adapter and command encoder OK")
    return 0


if __name__ == "__main__":
    sys.exit(main())
