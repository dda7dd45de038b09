#!/usr/bin/env python3
"""CLIP encoder adapter for the `sid` command encoder protocol.

Reads {"model", "kind": "image" | "text", "items": [...]} on stdin (images as
base64 PNG) and writes {"embeddings": [[...], ...]} on stdout. Vectors are
returned unnormalized; the caller normalizes.

Weights are resolved by `transformers` (local cache or the hub); set
SID_CLIP_MODEL to point at a local directory when offline.
"""

import base64
import io
import json
import os
import sys


def main() -> int:
    request = json.load(sys.stdin)
    model_id = os.environ.get("SID_CLIP_MODEL") or request.get("model") or "openai/clip-vit-base-patch32"

    import torch
    from PIL import Image
    from transformers import CLIPModel, CLIPProcessor

    model = CLIPModel.from_pretrained(model_id).eval()
    processor = CLIPProcessor.from_pretrained(model_id)

    with torch.no_grad():
        if request["kind"] == "image":
            images = [Image.open(io.BytesIO(base64.b64decode(item))).convert("RGB") for item in request["items"]]
            inputs = processor(images=images, return_tensors="pt")
            features = model.get_image_features(**inputs)
        elif request["kind"] == "text":
            inputs = processor(text=list(request["items"]), return_tensors="pt", padding=True, truncation=True)
            features = model.get_text_features(**inputs)
        else:
            print(f"unknown kind: {request['kind']}", file=sys.stderr)
            return 2

    json.dump({"embeddings": features.to(torch.float32).tolist()}, sys.stdout)
    return 0


if __name__ == "__main__":
    sys.exit(main())
