"""Writes a tiny random GPT-2 checkpoint plus reference activations for the backbone tests."""
import json
import sys
from pathlib import Path

import torch
from transformers import GPT2Config, GPT2Model

out = Path(sys.argv[1] if len(sys.argv) > 1 else "tests/data/tiny_gpt2")
out.mkdir(parents=True, exist_ok=True)
torch.manual_seed(0)
cfg = GPT2Config(vocab_size=260, n_positions=32, n_embd=8, n_layer=2, n_head=2,
                 resid_pdrop=0.0, embd_pdrop=0.0, attn_pdrop=0.0, initializer_range=0.3)
model = GPT2Model(cfg).eval()
with torch.no_grad():
    for p in model.parameters():
        p.add_(0.1 * torch.randn_like(p))
model.save_pretrained(out, safe_serialization=True)
conf = json.loads((out / "config.json").read_text())
conf["tokenizer"] = "byte"
(out / "config.json").write_text(json.dumps(conf, indent=2))
x = torch.randn(1, 6, 8, dtype=torch.float64)
model = model.double()
with torch.no_grad():
    y = model(inputs_embeds=x).last_hidden_state
(out / "reference.json").write_text(json.dumps({"inputs": x[0].tolist(), "outputs": y[0].tolist()}))
