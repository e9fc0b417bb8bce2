#!/usr/bin/env python3
"""Convert Keras VGG16 conv weights (HDF5) into the pocus tensor file.

    convert_keras_vgg16.py vgg16_weights_tf_dim_ordering_tf_kernels_notop.h5 vgg16_backbone.bin

Keras stores each conv as <layer>/<layer>/kernel:0 with shape (kh, kw, in, out)
and bias:0 with shape (out,), which is the layout pocus uses, so tensors are
copied as-is under the names <layer>/kernel and <layer>/bias. Dense layers
(top) are ignored. Prints the SHA-256 to put in model.pretrained_sha256.
"""
import argparse
import hashlib
import re
import struct
import sys

import h5py
import numpy as np

MAGIC = b"PCUSW001"
CONV = re.compile(r"^block(\d+)_conv(\d+)$")


def conv_tensors(h5):
    root = h5["model_weights"] if "model_weights" in h5 else h5
    out = {}
    for layer in root:
        if not CONV.match(layer):
            continue
        group = root[layer]
        # weights live either directly under the layer or one level down
        inner = group[layer] if layer in group else group
        names = {k.split(":")[0]: k for k in inner.keys()}
        if "kernel" not in names or "bias" not in names:
            raise ValueError(f"{layer}: expected kernel and bias, found {sorted(inner.keys())}")
        kernel = np.asarray(inner[names["kernel"]], dtype="<f4")
        bias = np.asarray(inner[names["bias"]], dtype="<f4")
        if kernel.ndim != 4 or bias.shape != (kernel.shape[3],):
            raise ValueError(f"{layer}: kernel {kernel.shape} / bias {bias.shape} are not a 2-D conv")
        out[f"{layer}/kernel"] = kernel
        out[f"{layer}/bias"] = bias
    if not out:
        raise ValueError("no blockN_convM layers found")
    return out


def write_tensors(path, tensors):
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            t = tensors[name]
            raw = name.encode()
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            f.write(struct.pack("<I", t.ndim))
            f.write(struct.pack(f"<{t.ndim}i", *t.shape))
            f.write(np.ascontiguousarray(t, dtype="<f4").tobytes())


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("h5")
    ap.add_argument("out")
    args = ap.parse_args(argv)
    with h5py.File(args.h5, "r") as h5:
        tensors = conv_tensors(h5)
    write_tensors(args.out, tensors)
    digest = hashlib.sha256(open(args.out, "rb").read()).hexdigest()
    layers = sorted({n.split("/")[0] for n in tensors})
    print(f"{len(layers)} conv layers -> {args.out}")
    print(f"sha256 {digest}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
