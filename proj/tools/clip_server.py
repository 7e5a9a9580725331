#!/usr/bin/env python3
"""Reference encoder service for the `remote` backend.

Serves image/text embeddings over the small JSON protocol the C++ client
speaks (see README, "Real encoder backend"):

    GET  /v1/info          -> {name, visual_arch, embedding_dim, temperature, preprocess}
    POST /v1/embed_images  -> {"images":[{height,width,pixels_b64}]}    (float32 HWC, RGB, [0,1])
    POST /v1/embed_texts   -> {"texts":[...]}

Responses carry embeddings as base64-encoded little-endian float32:
    {"embeddings_b64": ["...", ...]}

Real use needs torch + open_clip (pip install open_clip_torch) and the
pretrained weights, e.g.:

    python tools/clip_server.py --model RN50 --pretrained openai --port 8731

`--selftest` swaps in a deterministic numpy random-projection encoder so the
wire protocol can be exercised without model weights.
"""

import argparse
import base64
import hashlib
import json
import sys
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np


def decode_image(entry):
    h, w = int(entry["height"]), int(entry["width"])
    raw = base64.b64decode(entry["pixels_b64"])
    pixels = np.frombuffer(raw, dtype="<f4")
    if pixels.size != h * w * 3:
        raise ValueError(f"image payload holds {pixels.size} floats, expected {h * w * 3}")
    return pixels.reshape(h, w, 3)


def encode_embeddings(matrix):
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    return [base64.b64encode(row.tobytes()).decode("ascii") for row in matrix]


class SelfTestEncoder:
    """Seeded random projection of 8x8 mean-pooled RGB; no weights needed."""

    name = "selftest"
    visual_arch = "randproj"
    embedding_dim = 32
    temperature = 0.07
    preprocess = "meanpool8-randproj-seed0"

    def __init__(self):
        rng = np.random.default_rng(0)
        self._image_proj = rng.standard_normal((8 * 8 * 3, self.embedding_dim)).astype(np.float32)
        self._text_rng_base = rng.integers(0, 2**31)

    @staticmethod
    def _pool(image, bins=8):
        h, w, _ = image.shape
        rows = np.linspace(0, h, bins + 1, dtype=int)
        cols = np.linspace(0, w, bins + 1, dtype=int)
        out = np.zeros((bins, bins, 3), dtype=np.float32)
        for r in range(bins):
            for c in range(bins):
                r1, c1 = max(rows[r + 1], rows[r] + 1), max(cols[c + 1], cols[c] + 1)
                out[r, c] = image[rows[r]:r1, cols[c]:c1].reshape(-1, 3).mean(axis=0)
        return out

    def embed_images(self, images):
        feats = np.stack([self._pool(img).reshape(-1) for img in images])
        emb = feats @ self._image_proj
        return emb / np.linalg.norm(emb, axis=1, keepdims=True)

    def embed_texts(self, texts):
        rows = []
        for text in texts:
            digest = hashlib.sha256(text.encode()).digest()
            stable = int.from_bytes(digest[:4], "little")
            rng = np.random.default_rng((stable ^ self._text_rng_base) & 0x7FFFFFFF)
            row = rng.standard_normal(self.embedding_dim).astype(np.float32)
            rows.append(row / np.linalg.norm(row))
        return np.stack(rows)


class OpenClipEncoder:
    def __init__(self, model_name, pretrained, device):
        try:
            import open_clip
            import torch
            from PIL import Image
        except ImportError as e:
            sys.exit(f"error: the real encoder needs torch, Pillow and open_clip_torch ({e})")
        self._torch = torch
        self._pil = Image
        self.name = "open_clip"
        self.visual_arch = model_name
        self.device = device
        model, _, preprocess = open_clip.create_model_and_transforms(
            model_name, pretrained=pretrained)
        self.model = model.eval().to(device)
        self.transform = preprocess
        self.tokenizer = open_clip.get_tokenizer(model_name)
        with torch.no_grad():
            probe = self.model.encode_text(self.tokenizer(["probe"]).to(device))
            self.embedding_dim = int(probe.shape[1])
            self.temperature = float(1.0 / self.model.logit_scale.exp().item())
        self.preprocess = f"open_clip/{model_name}/{pretrained}"

    def embed_images(self, images):
        torch = self._torch
        tensors = []
        for img in images:
            as_u8 = np.clip(img * 255.0 + 0.5, 0, 255).astype(np.uint8)
            tensors.append(self.transform(self._pil.fromarray(as_u8)))
        batch = torch.stack(tensors).to(self.device)
        with torch.no_grad():
            emb = self.model.encode_image(batch)
        return emb.cpu().float().numpy()

    def embed_texts(self, texts):
        torch = self._torch
        tokens = self.tokenizer(list(texts)).to(self.device)
        with torch.no_grad():
            emb = self.model.encode_text(tokens)
        return emb.cpu().float().numpy()


def make_handler(encoder, batch_limit):
    class Handler(BaseHTTPRequestHandler):
        def _reply(self, status, payload):
            body = json.dumps(payload).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self):
            if self.path != "/v1/info":
                return self._reply(404, {"error": "unknown endpoint"})
            self._reply(200, {
                "name": encoder.name,
                "visual_arch": encoder.visual_arch,
                "embedding_dim": encoder.embedding_dim,
                "temperature": encoder.temperature,
                "preprocess": encoder.preprocess,
            })

        def do_POST(self):
            try:
                length = int(self.headers.get("Content-Length", "0"))
                body = json.loads(self.rfile.read(length))
                if self.path == "/v1/embed_images":
                    images = [decode_image(e) for e in body["images"]]
                    if len(images) > batch_limit:
                        return self._reply(400, {"error": f"batch exceeds {batch_limit}"})
                    emb = encoder.embed_images(images)
                elif self.path == "/v1/embed_texts":
                    emb = encoder.embed_texts(body["texts"])
                else:
                    return self._reply(404, {"error": "unknown endpoint"})
                self._reply(200, {"embeddings_b64": encode_embeddings(emb)})
            except Exception as e:  # report, don't crash the service
                self._reply(500, {"error": str(e)})

        def log_message(self, fmt, *args):
            pass

    return Handler


def main():
    parser = argparse.ArgumentParser(description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--model", default="RN50", help="open_clip model name")
    parser.add_argument("--pretrained", default="openai", help="open_clip pretrained tag")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8731)
    parser.add_argument("--batch-limit", type=int, default=256)
    parser.add_argument("--selftest", action="store_true",
                        help="serve a deterministic weight-free encoder (protocol testing)")
    args = parser.parse_args()

    encoder = SelfTestEncoder() if args.selftest else OpenClipEncoder(
        args.model, args.pretrained, args.device)
    server = ThreadingHTTPServer((args.host, args.port), make_handler(encoder, args.batch_limit))
    print(f"serving {encoder.name}/{encoder.visual_arch} "
          f"(dim={encoder.embedding_dim}, tau={encoder.temperature:.4g}) "
          f"on http://{args.host}:{args.port}", flush=True)
    server.serve_forever()


if __name__ == "__main__":
    main()
