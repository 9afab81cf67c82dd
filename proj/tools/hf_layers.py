#!/usr/bin/env python3
"""External layer extractor for a Hugging Face BERT-style model.

As a probing_cli command encoder:
    python3 tools/hf_layers.py MODEL REQUEST.jsonl RESPONSE.bin
Export the model's vocabulary first (the toolkit tokenizes itself):
    python3 tools/hf_layers.py --export-vocab MODEL vocab.txt

Each request line is {"pieces": [ids...]}, already wrapped in [CLS]/[SEP].
The response is one LSTK record per request line: layer 0 is the plain
piece-embedding lookup (no position or segment embeddings, no layer norm),
layers 1..L are the hidden states of the transformer layers.
"""
import json
import struct
import sys
import zlib

import numpy as np
import torch
from transformers import AutoModel, AutoTokenizer


def export_vocab(model_name, path):
    tok = AutoTokenizer.from_pretrained(model_name)
    vocab = sorted(tok.get_vocab().items(), key=lambda kv: kv[1])
    with open(path, "w", encoding="utf-8") as f:
        for piece, _ in vocab:
            f.write(piece + "\n")


def record(layers):
    # layers: (L+1, pieces, width) float32
    payload = np.ascontiguousarray(layers, dtype="<f4").tobytes()
    n, pieces, width = layers.shape
    header = b"LSTK" + struct.pack("<5I", 1, n, pieces, width, zlib.crc32(payload) & 0xFFFFFFFF)
    return header + payload


def main(argv):
    if len(argv) == 4 and argv[1] == "--export-vocab":
        export_vocab(argv[2], argv[3])
        return 0
    if len(argv) != 4:
        print(__doc__, file=sys.stderr)
        return 2
    model_name, request, response = argv[1:]
    torch.manual_seed(0)
    model = AutoModel.from_pretrained(model_name, output_hidden_states=True)
    model.eval()
    lexical = model.get_input_embeddings()
    out = bytearray()
    with open(request, encoding="utf-8") as f, torch.no_grad():
        for line in f:
            if not line.strip():
                continue
            ids = torch.tensor([json.loads(line)["pieces"]], dtype=torch.long)
            hidden = model(input_ids=ids).hidden_states  # embeddings output + L layers
            stack = [lexical(ids)[0]] + [h[0] for h in hidden[1:]]
            out += record(torch.stack(stack).float().numpy())
    with open(response, "wb") as f:
        f.write(out)
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
