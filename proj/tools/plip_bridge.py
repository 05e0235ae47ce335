#!/usr/bin/env python3
"""Serves image/text embeddings and image-space VJPs for a CLIP-style checkpoint.

Framing (stdin/stdout, one request at a time): a JSON header line followed by
`payload` little-endian float64 values. Replies use the same framing.

  info                          -> {dim, logit_scale}
  encode_text {prompts}         -> rows x dim text embeddings (unnormalized)
  embed {shape}  [image]        -> dim image embedding
  vjp {shape}    [image, cot]   -> [embedding, d<cot, embedding>/d image]

Images arrive as channels-first [0, 1] RGB. Resizing, centre cropping and
mean/std normalization run inside the differentiated graph, so gradients are
with respect to the raw pixels.

`--checkpoint toy:SEED` serves a small seeded float64 network instead of real
weights; it exercises the protocol without any download.
"""

import argparse
import json
import sys
import zlib

import numpy as np
import torch
import torch.nn.functional as F


class ToyBackend:
    def __init__(self, seed):
        gen = torch.Generator().manual_seed(seed)
        self.seed = seed
        self.dim = 16
        self.conv_w = torch.randn(8, 3, 3, 3, generator=gen, dtype=torch.float64) * 0.3
        self.conv_b = torch.randn(8, generator=gen, dtype=torch.float64) * 0.1
        self.fc_w = torch.randn(self.dim, 8 * 4 * 4, generator=gen, dtype=torch.float64) * 0.2
        self.fc_b = torch.randn(self.dim, generator=gen, dtype=torch.float64) * 0.1
        self.logit_scale = 50.0
        self.dtype = torch.float64

    def image_features(self, x):
        h = torch.tanh(F.conv2d(x, self.conv_w, self.conv_b, stride=2, padding=1))
        h = F.adaptive_avg_pool2d(h, (4, 4)).flatten(1)
        return h @ self.fc_w.T + self.fc_b

    def text_features(self, prompts):
        rows = []
        for p in prompts:
            gen = torch.Generator().manual_seed((zlib.crc32(p.encode("utf-8")) ^ self.seed) & 0xFFFFFFFF)
            rows.append(torch.randn(self.dim, generator=gen, dtype=torch.float64))
        return torch.stack(rows)


class ClipBackend:
    def __init__(self, locator, device, cache_dir):
        from transformers import AutoTokenizer, CLIPImageProcessor, CLIPModel

        kwargs = {"cache_dir": cache_dir} if cache_dir else {}
        self.device = torch.device(device)
        self.model = CLIPModel.from_pretrained(locator, **kwargs).eval().to(self.device)
        for p in self.model.parameters():
            p.requires_grad_(False)
        self.tokenizer = AutoTokenizer.from_pretrained(locator, **kwargs)
        proc = CLIPImageProcessor.from_pretrained(locator, **kwargs)
        crop = proc.crop_size
        self.crop = int(crop) if isinstance(crop, (int, float)) else int(getattr(crop, "height", None) or crop["height"])
        self.mean = torch.tensor(proc.image_mean, device=self.device).view(1, 3, 1, 1)
        self.std = torch.tensor(proc.image_std, device=self.device).view(1, 3, 1, 1)
        self.dim = int(self.model.config.projection_dim)
        self.logit_scale = float(self.model.logit_scale.exp().item())
        self.dtype = torch.float32

    def preprocess(self, x):
        _, _, h, w = x.shape
        scale = self.crop / min(h, w)
        if (h, w) != (self.crop, self.crop):
            nh, nw = max(self.crop, round(h * scale)), max(self.crop, round(w * scale))
            x = F.interpolate(x, size=(nh, nw), mode="bilinear", align_corners=False, antialias=False)
            top, left = (nh - self.crop) // 2, (nw - self.crop) // 2
            x = x[:, :, top:top + self.crop, left:left + self.crop]
        return (x - self.mean) / self.std

    def image_features(self, x):
        return projected(self.model.get_image_features(pixel_values=self.preprocess(x.to(self.device))))

    def text_features(self, prompts):
        tok = self.tokenizer(prompts, padding=True, truncation=True, return_tensors="pt").to(self.device)
        with torch.no_grad():
            return projected(self.model.get_text_features(**tok))


def projected(out):
    # Older transformers return the projected tensor; newer ones wrap it as pooler_output.
    return out if torch.is_tensor(out) else out.pooler_output


def read_exact(stream, n):
    buf = bytearray()
    while len(buf) < n:
        chunk = stream.read(n - len(buf))
        if not chunk:
            raise EOFError("input closed")
        buf.extend(chunk)
    return bytes(buf)


def reply(out, header, payload=None):
    data = b""
    if payload is not None:
        arr = np.ascontiguousarray(payload, dtype="<f8")
        header["payload"] = int(arr.size)
        data = arr.tobytes()
    else:
        header["payload"] = 0
    header.setdefault("ok", True)
    out.write((json.dumps(header) + "\n").encode("utf-8"))
    out.write(data)
    out.flush()


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--checkpoint", required=True)
    ap.add_argument("--device", default="cpu")
    ap.add_argument("--cache-dir", default="")
    args = ap.parse_args()

    inp, out = sys.stdin.buffer, sys.stdout.buffer
    try:
        if args.checkpoint.startswith("toy:"):
            backend = ToyBackend(int(args.checkpoint[4:]))
        else:
            backend = ClipBackend(args.checkpoint, args.device, args.cache_dir or None)
    except Exception as exc:
        inp.readline()  # the caller's opening info request
        reply(out, {"ok": False, "error": f"cannot load checkpoint '{args.checkpoint}': {exc}"})
        return 1

    while True:
        line = inp.readline()
        if not line:
            return 0
        header = json.loads(line)
        n = int(header.get("payload", 0))
        payload = np.frombuffer(read_exact(inp, 8 * n), dtype="<f8") if n else np.empty(0)
        op = header.get("op")
        try:
            if op == "quit":
                return 0
            if op == "info":
                reply(out, {"dim": backend.dim, "logit_scale": backend.logit_scale})
            elif op == "encode_text":
                feats = backend.text_features(header["prompts"]).double().cpu().numpy()
                reply(out, {"rows": feats.shape[0], "dim": feats.shape[1]}, feats.ravel())
            elif op in ("embed", "vjp"):
                c, h, w = header["shape"]
                size = c * h * w
                img = torch.tensor(payload[:size].reshape(1, c, h, w), dtype=backend.dtype)
                if op == "embed":
                    with torch.no_grad():
                        emb = backend.image_features(img)[0]
                    reply(out, {}, emb.double().cpu().numpy())
                else:
                    img.requires_grad_(True)
                    emb = backend.image_features(img)[0]
                    cot = torch.tensor(payload[size:], dtype=emb.dtype, device=emb.device)
                    (grad,) = torch.autograd.grad((emb * cot).sum(), img)
                    reply(out, {}, np.concatenate([emb.detach().double().cpu().numpy(),
                                                   grad[0].double().cpu().numpy().ravel()]))
            else:
                reply(out, {"ok": False, "error": f"unknown op {op!r}"})
        except Exception as exc:
            reply(out, {"ok": False, "error": f"{op}: {exc}"})


if __name__ == "__main__":
    sys.exit(main())
