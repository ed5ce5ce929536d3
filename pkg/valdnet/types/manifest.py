from typing import TypedDict

from .shared import Split


class SampleDictBase(TypedDict):
    id: str
    label: int
    frames: list[str]


class SampleDict(SampleDictBase, total=False):
    flows: list[str]
    split: Split


class ManifestDictBase(TypedDict):
    name: str
    frame_size: int
    samples: list[SampleDict]


class ManifestDict(ManifestDictBase, total=False):
    flow_offset: int


class SampleBuilder:
    shared: SampleDict

    def __init__(self, id: str, label: int):
        self.shared = {
            "id": id,
            "label": label,
            "frames": [],
        }

    def add_frame(self, path: str):
        self.shared["frames"].append(path)
        return self

    def add_flow(self, path: str):
        self.shared.setdefault("flows", []).append(path)
        return self

    def build(self, split: Split | None = None) -> SampleDict:
        if split is not None:
            self.shared["split"] = split
        return self.shared


class ManifestBuilder:
    shared: ManifestDict

    def __init__(self, name: str, frame_size: int):
        self.shared = {
            "name": name,
            "frame_size": frame_size,
            "samples": [],
        }

    def add_sample(self, sample: SampleDict):
        self.shared["samples"].append(sample)
        return self

    def build(self, flow_offset: int | None = None) -> ManifestDict:
        if flow_offset is not None:
            self.shared["flow_offset"] = flow_offset
        return self.shared
