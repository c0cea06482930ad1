#!/usr/bin/env python3
"""Regenerates the bundled graph JSON files.

Topologies follow the torchvision reference definitions of ResNet18,
MobileNet-V2 and ShuffleNet-V2 x1.0 with a 7-way classifier. Node ids mirror
torchvision module paths so an exporter can hook them directly; unit output
nodes carry the block name (``layer1.0``, ``features.3``, ``stage2.0``).
"""
import json
import pathlib

CLASS_COUNT = 7


class Builder:
    def __init__(self, input_shape):
        self.input_shape = input_shape
        self.nodes = []
        self.edges = []
        self.coupling = []

    def add(self, id_, kind, out, src, unit=None, **kw):
        node = {
            "id": id_,
            "kind": kind,
            "out_channels": out,
            "kernel": kw.get("kernel", [1, 1]),
            "stride": kw.get("stride", [1, 1]),
            "padding": kw.get("padding", [0, 0]),
            "groups": kw.get("groups", 1),
            "has_bias": kw.get("has_bias", False),
            "prunable": kw.get("prunable", False),
            "channel_prunable": kw.get("channel_prunable", False),
        }
        if "offset" in kw:
            node["offset"] = kw["offset"]
        if unit is not None:
            node["unit"] = unit
        self.nodes.append(node)
        for s in src if isinstance(src, list) else ([src] if src else []):
            self.edges.append([s, id_])
        return id_

    def conv(self, id_, out, src, k, s=1, groups=1, bias=False, unit=None, cp=False, kind="conv2d"):
        return self.add(id_, kind, out, src, unit, kernel=[k, k], stride=[s, s],
                        padding=[k // 2, k // 2], groups=groups, has_bias=bias,
                        channel_prunable=cp)

    def dump(self, path):
        doc = {
            "version": 1,
            "input_shape": self.input_shape,
            "class_count": CLASS_COUNT,
            "nodes": self.nodes,
            "edges": self.edges,
            "coupling_groups": self.coupling,
        }
        path.write_text(json.dumps(doc, indent=1) + "\n")


def resnet18(input_shape, widths=(64, 128, 256, 512)):
    b = Builder(input_shape)
    stem = widths[0]
    b.conv("conv1", stem, None, 7, s=2)
    b.add("bn1", "batch_norm", stem, "conv1")
    b.add("relu", "relu", stem, "bn1")
    b.add("maxpool", "pool", stem, "relu", kernel=[3, 3], stride=[2, 2], padding=[1, 1])
    prev, in_c = "maxpool", stem
    for stage, (width, stride) in enumerate(zip(widths, (1, 2, 2, 2)), start=1):
        group = []
        for blk in range(2):
            name = f"layer{stage}.{blk}"
            s = stride if blk == 0 else 1
            coupled = stage > 1
            b.conv(f"{name}.conv1", width, prev, 3, s=s, unit=name, cp=True)
            b.add(f"{name}.bn1", "batch_norm", width, f"{name}.conv1", unit=name)
            b.add(f"{name}.relu1", "relu", width, f"{name}.bn1", unit=name)
            b.conv(f"{name}.conv2", width, f"{name}.relu1", 3, unit=name, cp=coupled)
            b.add(f"{name}.bn2", "batch_norm", width, f"{name}.conv2", unit=name)
            group.append(f"{name}.conv2")
            skip = prev
            if s != 1 or in_c != width:
                b.conv(f"{name}.downsample.0", width, prev, 1, s=s, unit=name, cp=coupled)
                b.add(f"{name}.downsample.1", "batch_norm", width, f"{name}.downsample.0", unit=name)
                group.append(f"{name}.downsample.0")
                skip = f"{name}.downsample.1"
            b.add(f"{name}.add", "add", width, [f"{name}.bn2", skip], unit=name)
            b.add(name, "relu", width, f"{name}.add", unit=name, prunable=True)
            prev, in_c = name, width
        if stage > 1:
            b.coupling.append(group)
    b.add("avgpool", "global_pool", in_c, prev)
    b.add("fc", "classifier", CLASS_COUNT, "avgpool", has_bias=True)
    return b


MOBILENET_V2_CFG = [(1, 16, 1, 1), (6, 24, 2, 2), (6, 32, 3, 2), (6, 64, 4, 2),
                    (6, 96, 3, 1), (6, 160, 3, 2), (6, 320, 1, 1)]


def mobilenet_v2(input_shape, cfg=MOBILENET_V2_CFG, stem=32, last=1280):
    b = Builder(input_shape)
    b.conv("features.0.0", stem, None, 3, s=2)
    b.add("features.0.1", "batch_norm", stem, "features.0.0")
    b.add("features.0.2", "relu", stem, "features.0.1")
    prev, in_c, idx = "features.0.2", stem, 1
    for t, c, n, s in cfg:
        for i in range(n):
            stride = s if i == 0 else 1
            name = f"features.{idx}"
            hidden = in_c * t
            skip = stride == 1 and in_c == c
            src, layer = prev, 0
            if t != 1:
                p = f"{name}.conv.{layer}"
                b.conv(f"{p}.0", hidden, src, 1, unit=name, cp=True)
                b.add(f"{p}.1", "batch_norm", hidden, f"{p}.0", unit=name)
                b.add(f"{p}.2", "relu", hidden, f"{p}.1", unit=name)
                src, layer = f"{p}.2", layer + 1
            p = f"{name}.conv.{layer}"
            b.conv(f"{p}.0", hidden, src, 3, s=stride, groups=hidden, unit=name,
                   kind="depthwise_conv2d")
            b.add(f"{p}.1", "batch_norm", hidden, f"{p}.0", unit=name)
            b.add(f"{p}.2", "relu", hidden, f"{p}.1", unit=name)
            src, layer = f"{p}.2", layer + 1
            b.conv(f"{name}.conv.{layer}", c, src, 1, unit=name)
            bn_id = name if not skip else f"{name}.conv.{layer + 1}"
            b.add(bn_id, "batch_norm", c, f"{name}.conv.{layer}", unit=name, prunable=not skip)
            if skip:
                b.add(name, "add", c, [bn_id, prev], unit=name, prunable=True)
            prev, in_c, idx = name, c, idx + 1
    head = f"features.{idx}"
    b.conv(f"{head}.0", last, prev, 1)
    b.add(f"{head}.1", "batch_norm", last, f"{head}.0")
    b.add(f"{head}.2", "relu", last, f"{head}.1")
    b.add("avgpool", "global_pool", last, f"{head}.2")
    b.add("classifier.1", "classifier", CLASS_COUNT, "avgpool", has_bias=True)
    return b


def shufflenet_v2(input_shape, stages=((116, 4), (232, 8), (464, 4)), stem=24, last=1024):
    b = Builder(input_shape)
    b.conv("conv1.0", stem, None, 3, s=2)
    b.add("conv1.1", "batch_norm", stem, "conv1.0")
    b.add("conv1.2", "relu", stem, "conv1.1")
    b.add("maxpool", "pool", stem, "conv1.2", kernel=[3, 3], stride=[2, 2], padding=[1, 1])
    prev, in_c = "maxpool", stem
    for stage, (out, repeats) in zip((2, 3, 4), stages):
        half = out // 2
        for i in range(repeats):
            name = f"stage{stage}.{i}"
            if i == 0:
                p = f"{name}.branch1"
                b.conv(f"{p}.0", in_c, prev, 3, s=2, groups=in_c, unit=name, kind="depthwise_conv2d")
                b.add(f"{p}.1", "batch_norm", in_c, f"{p}.0", unit=name)
                b.conv(f"{p}.2", half, f"{p}.1", 1, unit=name)
                b.add(f"{p}.3", "batch_norm", half, f"{p}.2", unit=name)
                b.add(f"{p}.4", "relu", half, f"{p}.3", unit=name)
                left, right, right_c, stride = f"{p}.4", prev, in_c, 2
            else:
                b.add(f"{name}.split0", "slice", half, prev, unit=name, offset=0)
                b.add(f"{name}.split1", "slice", half, prev, unit=name, offset=half)
                left, right, right_c, stride = f"{name}.split0", f"{name}.split1", half, 1
            p = f"{name}.branch2"
            b.conv(f"{p}.0", half, right, 1, unit=name, cp=True)
            b.add(f"{p}.1", "batch_norm", half, f"{p}.0", unit=name)
            b.add(f"{p}.2", "relu", half, f"{p}.1", unit=name)
            b.conv(f"{p}.3", half, f"{p}.2", 3, s=stride, groups=half, unit=name, kind="depthwise_conv2d")
            b.add(f"{p}.4", "batch_norm", half, f"{p}.3", unit=name)
            b.conv(f"{p}.5", half, f"{p}.4", 1, unit=name)
            b.add(f"{p}.6", "batch_norm", half, f"{p}.5", unit=name)
            b.add(f"{p}.7", "relu", half, f"{p}.6", unit=name)
            b.add(f"{name}.concat", "concat", out, [left, f"{p}.7"], unit=name)
            b.add(name, "channel_shuffle", out, f"{name}.concat", unit=name, groups=2, prunable=True)
            prev, in_c = name, out
    b.conv("conv5.0", last, prev, 1)
    b.add("conv5.1", "batch_norm", last, "conv5.0")
    b.add("conv5.2", "relu", last, "conv5.1")
    b.add("avgpool", "global_pool", last, "conv5.2")
    b.add("fc", "classifier", CLASS_COUNT, "avgpool", has_bias=True)
    return b


if __name__ == "__main__":
    here = pathlib.Path(__file__).resolve().parent
    full = [3, 102, 389]
    resnet18(full).dump(here / "resnet18_7class.json")
    mobilenet_v2(full).dump(here / "mobilenet_v2_7class.json")
    shufflenet_v2(full).dump(here / "shufflenet_v2_x1_7class.json")

    # Narrow variants with identical topology, used as test fixtures.
    toy = [3, 32, 32]
    fixtures = here.parent / "tests" / "fixtures"
    fixtures.mkdir(parents=True, exist_ok=True)
    resnet18(toy, widths=(8, 16, 16, 32)).dump(fixtures / "toy_resnet.json")
    mobilenet_v2(toy, cfg=[(1, 8, 1, 1), (2, 8, 2, 2), (2, 16, 2, 2), (2, 16, 1, 1)],
                 stem=8, last=32).dump(fixtures / "toy_mobilenet.json")
    shufflenet_v2(toy, stages=((16, 2), (32, 2)), stem=8, last=32).dump(fixtures / "toy_shufflenet.json")
