"""Open-set protocol: known / known-unknown / unknown-unknown partition.

Identities are categorized purely by image count. Known identities (four or
more images) enroll their three lowest-numbered images in the gallery; the
same images also go into training, so the protocol is biased on purpose.
Known-unknowns (two or three images) contribute their lowest-numbered image
to training and the rest to the known-unknown probes. Unknown-unknowns
(a single image) are only ever probes.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

from .core import Dataset, GalleryTemplate, Key, ProtocolError, InvalidInputError

GALLERY_SIZE = 3

# LDA label shared by every known-unknown training image.
KNOWN_UNKNOWN_CLASS = "<known-unknown>"


class IdentityCategory(enum.Enum):
    KNOWN = "known"
    KNOWN_UNKNOWN = "known_unknown"
    UNKNOWN_UNKNOWN = "unknown_unknown"


class ProbeSetId(str, enum.Enum):
    C = "C"
    O1 = "O1"
    O2 = "O2"
    O3 = "O3"


def category_for_count(n_images: int) -> IdentityCategory:
    if n_images > GALLERY_SIZE:
        return IdentityCategory.KNOWN
    if n_images >= 2:
        return IdentityCategory.KNOWN_UNKNOWN
    if n_images == 1:
        return IdentityCategory.UNKNOWN_UNKNOWN
    raise InvalidInputError(f"identity with {n_images} images cannot be categorized")


def categorize_identities(d: Dataset) -> dict[str, IdentityCategory]:
    return {
        ident: category_for_count(len(images))
        for ident, images in d.images_by_identity().items()
    }


@dataclass(frozen=True)
class ProtocolPartition:
    training: frozenset[Key]
    gallery: dict[str, tuple[int, ...]]
    probes_known: frozenset[Key]
    probes_known_unknown: frozenset[Key]
    probes_unknown_unknown: frozenset[Key]

    @property
    def subjects(self) -> tuple[str, ...]:
        return tuple(sorted(self.gallery))

    def gallery_keys(self) -> frozenset[Key]:
        return frozenset((g, i) for g, images in self.gallery.items() for i in images)

    def probe_set(self, which: ProbeSetId | str) -> frozenset[Key]:
        return probe_set(self, which)

    def unknown_keys(self, which: ProbeSetId | str) -> frozenset[Key]:
        """Unknown probes (K and/or U) contained in probe set ``which``."""
        return probe_set(self, which) - self.probes_known

    def training_label(self, key: Key) -> str:
        """LDA class of a training key: its identity, or the pooled unknown class."""
        return key[0] if key[0] in self.gallery else KNOWN_UNKNOWN_CLASS

    def counts(self) -> dict[str, int]:
        return {
            "gallery_subjects": len(self.gallery),
            "training": len(self.training),
            "gallery_images": sum(len(v) for v in self.gallery.values()),
            "S": len(self.probes_known),
            "K": len(self.probes_known_unknown),
            "U": len(self.probes_unknown_unknown),
        }

    def to_dict(self) -> dict:
        def ordered(keys):
            return [[i, n] for i, n in sorted(keys)]

        return {
            "training": ordered(self.training),
            "gallery": {g: list(self.gallery[g]) for g in sorted(self.gallery)},
            "probes_known": ordered(self.probes_known),
            "probes_known_unknown": ordered(self.probes_known_unknown),
            "probes_unknown_unknown": ordered(self.probes_unknown_unknown),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ProtocolPartition":
        def keys(name):
            return frozenset((str(i), int(n)) for i, n in doc[name])

        try:
            return cls(
                training=keys("training"),
                gallery={str(g): tuple(int(i) for i in v) for g, v in doc["gallery"].items()},
                probes_known=keys("probes_known"),
                probes_known_unknown=keys("probes_known_unknown"),
                probes_unknown_unknown=keys("probes_unknown_unknown"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"malformed partition document: {exc}") from exc


def build_partition(d: Dataset) -> ProtocolPartition:
    images = d.images_by_identity()
    training: set[Key] = set()
    gallery: dict[str, tuple[int, ...]] = {}
    known: set[Key] = set()
    known_unknown: set[Key] = set()
    unknown_unknown: set[Key] = set()

    for ident in sorted(images):
        idx = images[ident]
        cat = category_for_count(len(idx))
        if cat is IdentityCategory.KNOWN:
            enrolled = tuple(idx[:GALLERY_SIZE])
            gallery[ident] = enrolled
            training.update((ident, i) for i in enrolled)
            known.update((ident, i) for i in idx[GALLERY_SIZE:])
        elif cat is IdentityCategory.KNOWN_UNKNOWN:
            training.add((ident, idx[0]))
            known_unknown.update((ident, i) for i in idx[1:])
        else:
            unknown_unknown.add((ident, idx[0]))

    if not gallery:
        raise ProtocolError("no identity has more than three images; the gallery would be empty")
    return ProtocolPartition(
        frozenset(training),
        gallery,
        frozenset(known),
        frozenset(known_unknown),
        frozenset(unknown_unknown),
    )


def probe_set(p: ProtocolPartition, which: ProbeSetId | str) -> frozenset[Key]:
    which = ProbeSetId(which)
    out = set(p.probes_known)
    if which in (ProbeSetId.O1, ProbeSetId.O3):
        out |= p.probes_known_unknown
    if which in (ProbeSetId.O2, ProbeSetId.O3):
        out |= p.probes_unknown_unknown
    return frozenset(out)


def gallery_templates(d: Dataset, p: ProtocolPartition) -> list[GalleryTemplate]:
    """Templates in lexicographic subject order, images ascending."""
    table = d.lookup()
    return [
        GalleryTemplate(g, [table[(g, i)].feature for i in p.gallery[g]])
        for g in sorted(p.gallery)
    ]


def training_set(d: Dataset, p: ProtocolPartition) -> Dataset:
    return d.select(p.training)
