"""One-file exporter: feature arrays or frozen-backbone outputs -> EMB1/LBL1.

EMB1 and LBL1 are the little-endian binary pool formats the selection
toolkit consumes (float32 features, int32 labels); this module writes them
without importing that package, so the file layout is the full contract.

Two sources:
  --array  a saved 2-D float array (.npy), optionally with 1-D integer labels
  --model  a torchvision classification model applied image-by-image to a
           class-per-subfolder directory, in sorted path order, eval mode,
           no augmentation; labels are subfolder indices

torch/torchvision/Pillow are imported only on the --model path.
"""

from __future__ import annotations

import argparse
import struct
import sys
from pathlib import Path

import numpy as np

EMB1_HEADER = struct.Struct("<4sIQIB3x")
LBL1_HEADER = struct.Struct("<4sIQI")
DTYPE_F32 = 1

IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png", ".bmp")


class ExportError(Exception):
    """Input cannot be exported; message says which file/shape is at fault."""


def write_emb1(values: np.ndarray, path) -> None:
    """Write a 2-D array as EMB1; values cast to float32 (round-to-nearest)."""
    arr = np.asarray(values)
    if arr.ndim != 2:
        raise ExportError(f"features must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ExportError(f"features must be at least 1x1, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        bad = np.argwhere(~np.isfinite(arr.astype(np.float64)))[0]
        raise ExportError(f"non-finite feature value at row {bad[0]}, col {bad[1]}")
    arr = np.ascontiguousarray(arr, dtype="<f4")
    n, d = arr.shape
    Path(path).write_bytes(EMB1_HEADER.pack(b"EMB1", 1, n, d, DTYPE_F32) + arr.tobytes())


def write_lbl1(labels: np.ndarray, path) -> None:
    """Write integer labels as LBL1 with the class count declared as max+1."""
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise ExportError(f"labels must be 1-D, got shape {arr.shape}")
    if arr.size < 1:
        raise ExportError("labels are empty")
    if not np.issubdtype(arr.dtype, np.integer):
        raise ExportError(f"labels must be integers, got dtype {arr.dtype}")
    if (arr < 0).any():
        raise ExportError("labels must be nonnegative")
    arr = np.ascontiguousarray(arr, dtype="<i4")
    num_classes = int(arr.max()) + 1
    Path(path).write_bytes(
        LBL1_HEADER.pack(b"LBL1", 1, arr.size, num_classes) + arr.tobytes()
    )


def export_array(array_path, out_emb, labels_path=None, out_lbl=None) -> tuple[int, int]:
    """Export a saved .npy array (and optional labels); returns (n, d)."""
    try:
        values = np.load(array_path)
    except OSError as e:
        raise ExportError(f"cannot read array {array_path}: {e}") from e
    if values.ndim != 2:
        raise ExportError(f"{array_path}: expected a 2-D array, got {values.ndim}-D")
    labels = None
    if labels_path is not None:
        try:
            labels = np.load(labels_path)
        except OSError as e:
            raise ExportError(f"cannot read labels {labels_path}: {e}") from e
        if labels.ndim != 1 or labels.shape[0] != values.shape[0]:
            raise ExportError(
                f"{labels_path}: labels shape {labels.shape} does not match "
                f"{values.shape[0]} feature rows"
            )
        if out_lbl is None:
            raise ExportError("--labels given but no label output path")
    write_emb1(values, out_emb)
    if labels is not None:
        write_lbl1(labels, out_lbl)
    return values.shape


def _collect_images(image_dir: Path) -> tuple[list[Path], list[int]]:
    """Image paths in deterministic sorted order with subfolder-index labels."""
    if not image_dir.is_dir():
        raise ExportError(f"image directory not found: {image_dir}")
    class_dirs = sorted(p for p in image_dir.iterdir() if p.is_dir())
    paths: list[Path] = []
    labels: list[int] = []
    if class_dirs:
        for idx, sub in enumerate(class_dirs):
            for p in sorted(sub.iterdir()):
                if p.suffix.lower() in IMAGE_SUFFIXES:
                    paths.append(p)
                    labels.append(idx)
    else:
        for p in sorted(image_dir.iterdir()):
            if p.suffix.lower() in IMAGE_SUFFIXES:
                paths.append(p)
                labels.append(0)
    if not paths:
        raise ExportError(f"no images under {image_dir}")
    return paths, labels


def export_from_model(
    model_name: str,
    image_dir,
    out_emb,
    out_lbl,
    checkpoint=None,
    node: str = "flatten",
    batch_size: int = 16,
) -> tuple[int, int]:
    """Frozen forward pass over an image folder; returns (n, d).

    With --checkpoint the state dict is loaded from disk; otherwise
    torchvision's default pretrained weights are resolved (may download).
    """
    import torch
    from PIL import Image
    from torchvision.models import get_model
    from torchvision.models.feature_extraction import create_feature_extractor
    from torchvision.transforms import functional as tf

    paths, labels = _collect_images(Path(image_dir))

    if checkpoint is not None:
        ck_path = Path(checkpoint)
        if not ck_path.exists():
            raise ExportError(f"checkpoint not found: {ck_path}")
        model = get_model(model_name, weights=None)
        state = torch.load(ck_path, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
    else:
        try:
            model = get_model(model_name, weights="DEFAULT")
        except Exception as e:
            raise ExportError(f"cannot resolve pretrained weights for {model_name}: {e}") from e
    model.eval()
    extractor = create_feature_extractor(model, return_nodes={node: "feat"})

    def load_one(path: Path) -> "torch.Tensor":
        try:
            with Image.open(path) as img:
                img = img.convert("RGB")
        except OSError as e:
            raise ExportError(f"unreadable image {path}: {e}") from e
        img = tf.center_crop(tf.resize(img, 256), 224)
        x = tf.to_tensor(img)
        return tf.normalize(x, mean=[0.485, 0.456, 0.406], std=[0.229, 0.224, 0.225])

    chunks = []
    with torch.no_grad():
        for start in range(0, len(paths), batch_size):
            batch = torch.stack([load_one(p) for p in paths[start : start + batch_size]])
            feats = extractor(batch)["feat"]
            chunks.append(feats.reshape(feats.shape[0], -1).cpu().numpy())
    features = np.concatenate(chunks, axis=0)
    write_emb1(features, out_emb)
    write_lbl1(np.asarray(labels, dtype=np.int64), out_lbl)
    return features.shape


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embexport", description="Export features to EMB1/LBL1 pool files."
    )
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--array", help=".npy 2-D float feature array")
    source.add_argument("--model", help="torchvision model name, e.g. resnet18")
    parser.add_argument("--labels", help=".npy 1-D integer labels (array source)")
    parser.add_argument("--images", help="image folder, one subfolder per class (model source)")
    parser.add_argument("--checkpoint", help="local state-dict file for --model")
    parser.add_argument("--node", default="flatten", help="feature-graph node to export")
    parser.add_argument("--batch-size", type=int, default=16)
    parser.add_argument("--out-emb", required=True, help="EMB1 output path")
    parser.add_argument("--out-lbl", help="LBL1 output path")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.array:
            if args.labels and not args.out_lbl:
                raise ExportError("--labels requires --out-lbl")
            n, d = export_array(args.array, args.out_emb, args.labels, args.out_lbl)
        else:
            if not args.images:
                raise ExportError("--model requires --images")
            if not args.out_lbl:
                raise ExportError("--model requires --out-lbl")
            n, d = export_from_model(
                args.model,
                args.images,
                args.out_emb,
                args.out_lbl,
                checkpoint=args.checkpoint,
                node=args.node,
                batch_size=args.batch_size,
            )
    except ExportError as e:
        print(f"embexport: {e}", file=sys.stderr)
        return 1
    print(f"embexport: wrote {n}x{d} features to {args.out_emb}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
