"""Dataset manifests, vocabulary reduction, artist-filtered folds, and the
synthetic vocals/non-vocals generator used for desk-scale runs.

File formats (all versioned by their first line):
  manifest  TSV: id, path (relative to the manifest), artist, tags
            (semicolon-separated raw tags)
  vocab     'unmatched:' directive plus [vocals] / [nonvocals] sections
  folds     CSV: id, fold
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import CANONICAL_RATE, AudioClip, save_wav
from .labels import NONVOCALS, VOCALS, Label

MANIFEST_MAGIC = "# tagstress-manifest v1"
VOCAB_MAGIC = "# tagstress-vocab v1"
FOLDS_MAGIC = "# tagstress-folds v1"


class ManifestError(ValueError):
    """Malformed manifest content; messages carry line numbers."""


class FoldError(ValueError):
    """Fold construction is impossible for this dataset."""


@dataclass(frozen=True)
class ManifestRecord:
    id: str
    path: str
    artist: str
    raw_tags: tuple


@dataclass(frozen=True)
class Manifest:
    name: str
    root: Path
    records: tuple

    def resolve(self, record: ManifestRecord) -> Path:
        return self.root / record.path


@dataclass(frozen=True)
class Instance:
    """One labeled clip after vocabulary reduction."""

    id: str
    path: Path
    artist: str
    label: Label


@dataclass(frozen=True)
class VocabularyMap:
    """Raw-tag lists mapping to the two-tag vocabulary. unmatched is either
    'drop' or 'nonvocals' (the latter mirrors datasets that define
    Non-Vocals as everything else)."""

    vocals_tags: frozenset
    nonvocals_tags: frozenset
    unmatched: str = "drop"

    def __post_init__(self):
        if self.vocals_tags & self.nonvocals_tags:
            raise ValueError("vocabulary lists overlap: %s"
                             % sorted(self.vocals_tags & self.nonvocals_tags))
        if self.unmatched not in ("drop", "nonvocals"):
            raise ValueError("unmatched policy must be 'drop' or 'nonvocals'")


@dataclass(frozen=True)
class FoldAssignment:
    fold_of: dict
    k: int

    def fold_ids(self, fold: int):
        return [i for i, f in self.fold_of.items() if f == fold]


def _read_versioned_lines(path, magic):
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text or text[0].strip() != magic:
        raise ManifestError("%s: first line must be %r" % (path, magic))
    return text


def load_manifest(path, check_paths: bool = True) -> Manifest:
    """Parse and validate a manifest file. Duplicate ids, unresolvable audio
    paths, and malformed lines raise with the offending line numbers."""
    path = Path(path)
    lines = _read_versioned_lines(path, MANIFEST_MAGIC)
    records = []
    seen: dict[str, int] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 4:
            raise ManifestError("%s:%d: expected 4 tab-separated fields, got %d"
                                % (path, lineno, len(parts)))
        rid, rel, artist, tags = parts
        if not rid or not artist:
            raise ManifestError("%s:%d: empty id or artist" % (path, lineno))
        if rid in seen:
            raise ManifestError("%s:%d: duplicate id %r (first seen on line %d)"
                                % (path, lineno, rid, seen[rid]))
        seen[rid] = lineno
        raw_tags = tuple(t for t in tags.split(";") if t)
        if check_paths and not (path.parent / rel).exists():
            raise ManifestError("%s:%d: audio path %r does not exist"
                                % (path, lineno, rel))
        records.append(ManifestRecord(id=rid, path=rel, artist=artist,
                                      raw_tags=raw_tags))
    return Manifest(name=path.stem, root=path.parent, records=tuple(records))


def save_manifest(path, manifest: Manifest) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(MANIFEST_MAGIC + "\n")
        for rec in manifest.records:
            fh.write("%s\t%s\t%s\t%s\n"
                     % (rec.id, rec.path, rec.artist, ";".join(rec.raw_tags)))


def load_vocabulary(path) -> VocabularyMap:
    lines = _read_versioned_lines(path, VOCAB_MAGIC)
    unmatched = "drop"
    section = None
    vocals: set[str] = set()
    nonvocals: set[str] = set()
    for lineno, line in enumerate(lines[1:], start=2):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if stripped.startswith("unmatched:"):
            unmatched = stripped.split(":", 1)[1].strip()
        elif stripped == "[vocals]":
            section = vocals
        elif stripped == "[nonvocals]":
            section = nonvocals
        elif section is not None:
            section.add(stripped)
        else:
            raise ManifestError("%s:%d: tag %r before any section"
                                % (path, lineno, stripped))
    return VocabularyMap(vocals_tags=frozenset(vocals),
                         nonvocals_tags=frozenset(nonvocals),
                         unmatched=unmatched)


def reduce_vocabulary(manifest: Manifest, vmap: VocabularyMap):
    """Label every record through the vocabulary map.

    A record matching any Vocals tag is Vocals, any NonVocals tag is
    NonVocals; matching both is a conflict (dropped with a warning);
    matching neither follows the map's unmatched policy. Re-running on the
    output relabels nothing: labels come only from raw tags.
    """
    instances = []
    for rec in manifest.records:
        tags = set(rec.raw_tags)
        is_v = bool(tags & vmap.vocals_tags)
        is_n = bool(tags & vmap.nonvocals_tags)
        if is_v and is_n:
            warnings.warn("instance %r matches both vocabularies; dropped" % rec.id)
            continue
        if is_v:
            label = VOCALS
        elif is_n:
            label = NONVOCALS
        elif vmap.unmatched == "nonvocals":
            label = NONVOCALS
        else:
            continue
        instances.append(Instance(id=rec.id, path=manifest.resolve(rec),
                                  artist=rec.artist, label=label))
    return instances


def make_folds(instances, k: int, rng) -> FoldAssignment:
    """Artist-filtered folds: every artist's instances land in one fold.

    Artists are ordered by decreasing instance count (rng shuffles within
    equal-count blocks, so the result is deterministic given the seed and
    invariant to record order) and assigned greedily to the fold that is
    currently smallest by (instance count, Vocals count).
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    by_artist: dict[str, list] = {}
    for inst in instances:
        by_artist.setdefault(inst.artist, []).append(inst)
    if len(by_artist) < k:
        raise FoldError("need at least %d artists, have %d" % (k, len(by_artist)))

    artists = sorted(by_artist)
    counts = {a: len(by_artist[a]) for a in artists}
    blocks: dict[int, list] = {}
    for a in artists:
        blocks.setdefault(counts[a], []).append(a)
    ordered = []
    for count in sorted(blocks, reverse=True):
        block = blocks[count]
        ordered.extend(block[i] for i in rng.permutation(len(block)))

    fold_sizes = [0] * k
    fold_vocals = [0] * k
    fold_of: dict[str, int] = {}
    for artist in ordered:
        insts = by_artist[artist]
        target = min(range(k), key=lambda j: (fold_sizes[j], fold_vocals[j], j))
        for inst in insts:
            fold_of[inst.id] = target
        fold_sizes[target] += len(insts)
        fold_vocals[target] += sum(1 for i in insts if i.label == VOCALS)

    mean_size = sum(fold_sizes) / k
    for j, size in enumerate(fold_sizes):
        if size > 1.5 * mean_size:
            warnings.warn("fold %d is oversized (%d of %d instances): artist "
                          "filtering dominates balance" % (j, size, len(instances)))
    return FoldAssignment(fold_of=fold_of, k=k)


def assert_artist_filtered(assignment: FoldAssignment, instances) -> None:
    """Exhaustive check that no artist id spans two folds."""
    artist_fold: dict[str, int] = {}
    for inst in instances:
        if inst.id not in assignment.fold_of:
            continue
        fold = assignment.fold_of[inst.id]
        if inst.artist in artist_fold and artist_fold[inst.artist] != fold:
            raise FoldError("artist %r appears in folds %d and %d"
                            % (inst.artist, artist_fold[inst.artist], fold))
        artist_fold[inst.artist] = fold


def save_folds(path, assignment: FoldAssignment, meta=None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(FOLDS_MAGIC + "\n")
        for key, value in (meta or {}).items():
            fh.write("# %s: %s\n" % (key, value))
        writer = csv.writer(fh)
        writer.writerow(["id", "fold"])
        for rid in sorted(assignment.fold_of):
            writer.writerow([rid, assignment.fold_of[rid]])


def load_folds(path):
    lines = _read_versioned_lines(path, FOLDS_MAGIC)
    meta = {}
    rows = []
    body = []
    for line in lines[1:]:
        if line.startswith("# ") and ":" in line:
            key, value = line[2:].split(":", 1)
            meta[key.strip()] = value.strip()
        elif line.strip():
            body.append(line)
    reader = csv.reader(body)
    header = next(reader)
    if header != ["id", "fold"]:
        raise ManifestError("%s: unexpected fold header %r" % (path, header))
    fold_of = {}
    k = 0
    for row in reader:
        fold_of[row[0]] = int(row[1])
        k = max(k, int(row[1]) + 1)
    return FoldAssignment(fold_of=fold_of, k=k), meta


# ---------------------------------------------------------------------------
# Synthetic generator
# ---------------------------------------------------------------------------

VOCALS_TAG_CHOICES = ("singing", "female.singing", "male.singing")
DECORATION_TAGS = ("guitar", "drums", "synth", "strings", "ambient", "classical")


def _colored_noise(rng, n, exponent):
    """Noise with power spectral density 1/f^exponent, unit peak."""
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    f = np.arange(len(spec), dtype=np.float64)
    f[0] = 1.0
    spec /= f ** (exponent / 2.0)
    x = np.fft.irfft(spec, n=n)
    return x / np.max(np.abs(x))


def _artist_bundle(rng):
    """A fixed timbre parameter set shared by all of one artist's clips."""
    return {
        "f0": float(np.exp(rng.uniform(np.log(110.0), np.log(392.0)))),
        "n_partials": int(rng.integers(3, 9)),
        "tilt_db_oct": float(rng.uniform(-9.0, -3.0)),
        "vib_rate": float(rng.uniform(5.0, 7.0)),
        "formants": np.sort(rng.uniform(500.0, 3500.0, size=2)),
        "bed_kind": "pink" if rng.random() < 0.6 else "drone",
        "bed_db": float(rng.uniform(-26.0, -22.0)),
        "drone_f0": float(rng.uniform(55.0, 110.0)),
    }


def _formant_gain(freqs, formants):
    freqs = np.atleast_1d(np.asarray(freqs, dtype=np.float64))
    gain = np.full(freqs.shape, 0.25)
    for fc in formants:
        gain = gain + np.exp(-0.5 * ((freqs - fc) / (0.18 * fc)) ** 2)
    return gain


def _note_track(rng, t, base_f0, note_dur_range, steps=(-7, -5, -4, -2, 0, 2, 4, 5, 7)):
    """Piecewise-constant pitch track: a melody of held notes around base_f0."""
    f0 = np.empty_like(t)
    pos = 0
    n = len(t)
    rate = CANONICAL_RATE
    while pos < n:
        dur = int(rng.uniform(*note_dur_range) * rate)
        semis = float(rng.choice(steps))
        f0[pos:pos + dur] = base_f0 * 2.0 ** (semis / 12.0)
        pos += dur
    return f0


def _harmonic_stack(rng, t, f0_track, bundle, vibrato_cents, tremolo_depth,
                    envelope_mod_rate, envelope_mod_depth=0.4):
    """Sum of partials following a pitch track, with optional vibrato,
    tremolo, and slow per-partial spectral envelope movement. The phase is
    integrated from the instantaneous frequency, so note changes are
    continuous."""
    n_partials = bundle["n_partials"]
    vib_rate = bundle["vib_rate"]
    f_inst = np.broadcast_to(np.asarray(f0_track, dtype=np.float64), t.shape).copy()
    if vibrato_cents > 0.0:
        f_inst *= 2.0 ** ((vibrato_cents / 1200.0) * np.sin(
            2.0 * np.pi * vib_rate * t + rng.uniform(0.0, 2.0 * np.pi)))
    phi = 2.0 * np.pi * np.cumsum(f_inst) / CANONICAL_RATE

    if tremolo_depth > 0.0:
        trem_rate = vib_rate * rng.uniform(0.9, 1.1)
        tremolo = 1.0 + tremolo_depth * np.sin(
            2.0 * np.pi * trem_rate * t + rng.uniform(0.0, 2.0 * np.pi))
    else:
        tremolo = 1.0

    f_ref = float(np.median(f_inst))
    out = np.zeros_like(t)
    for k in range(1, n_partials + 1):
        amp = (10.0 ** (bundle["tilt_db_oct"] * np.log2(k) / 20.0)
               * float(_formant_gain(k * f_ref, bundle["formants"])[0]))
        if envelope_mod_rate > 0.0:
            wobble = 1.0 + envelope_mod_depth * np.sin(
                2.0 * np.pi * envelope_mod_rate * t
                + rng.uniform(0.0, 2.0 * np.pi))
        else:
            wobble = 1.0
        out += amp * wobble * np.sin(k * phi + rng.uniform(0.0, 2.0 * np.pi))
    return out * tremolo


def _bed_signal(rng, t, bundle):
    """Accompaniment bed: a pink-noise floor, plus a harmonic drone for
    drone-flavored artists. The noise floor is always present so every
    artist has the same kind of broadband background."""
    n = len(t)
    pink = _colored_noise(rng, n, exponent=1.0)
    if bundle["bed_kind"] == "pink":
        return pink
    drone = _harmonic_stack(rng, t, np.full_like(t, bundle["drone_f0"]), {
        "n_partials": 6, "tilt_db_oct": -6.0, "vib_rate": bundle["vib_rate"],
        "formants": bundle["formants"]}, vibrato_cents=0.0, tremolo_depth=0.0,
        envelope_mod_rate=0.0)
    mix = pink + drone / np.max(np.abs(drone))
    return mix / np.max(np.abs(mix))


def _syllable_gate(rng, t, rate, floor=0.05):
    """Smooth phrase gating: the voice swells and pauses the way sung
    syllables do, without sharp edges."""
    phase = rng.uniform(0.0, 2.0 * np.pi)
    duty = rng.uniform(0.55, 0.8)
    carrier = 0.5 * (1.0 + np.sin(2.0 * np.pi * rate * t + phase))
    gate = np.clip((carrier - (1.0 - duty)) / duty, 0.0, 1.0)
    gate = gate * gate * (3.0 - 2.0 * gate)  # smoothstep easing
    return floor + (1.0 - floor) * gate


def _breath_noise(rng, n, lo_hz=2600.0, hi_hz=3400.0):
    """Band-limited noise between lo_hz and hi_hz, unit peak."""
    white = rng.standard_normal(n)
    spec = np.fft.rfft(white)
    freqs = np.arange(len(spec)) * (CANONICAL_RATE / n)
    spec[(freqs < lo_hz) | (freqs > hi_hz)] = 0.0
    x = np.fft.irfft(spec, n=n)
    return x / np.max(np.abs(x))


def _synth_vocals_clip(rng, bundle, duration_s):
    t = np.arange(int(duration_s * CANONICAL_RATE)) / CANONICAL_RATE
    base = bundle["f0"] * 2.0 ** (rng.uniform(-2.0, 2.0) / 12.0)
    melody = _note_track(rng, t, base, note_dur_range=(1.5, 3.0))
    vibrato_cents = rng.uniform(30.0, 90.0)
    tremolo_depth = rng.uniform(0.15, 0.45)
    envelope_mod = rng.uniform(1.0, 3.5)
    voice = _harmonic_stack(rng, t, melody, bundle, vibrato_cents,
                            tremolo_depth, envelope_mod)
    voice /= np.max(np.abs(voice))
    # Breathiness: gated band noise riding with the voice. It sits at a
    # fixed place on the frequency axis for every artist, which is exactly
    # what makes it both a strong class cue and an easy target for the
    # band equalizations.
    # Breathiness is continuous (it does not gate with the phrases), so
    # every vocals clip holds a steady narrowband marker riding a few dB
    # above the bed's noise floor.
    breath = _breath_noise(rng, len(t))
    breath_db = rng.uniform(-27.0, -23.0)
    voice *= _syllable_gate(rng, t, rate=rng.uniform(2.0, 3.5),
                            floor=rng.uniform(0.05, 0.45))
    voiced = voice + 10.0 ** (breath_db / 20.0) * breath
    bed = _bed_signal(rng, t, bundle)
    mix = voiced + 10.0 ** (bundle["bed_db"] / 20.0) * bed
    return 0.85 * mix / np.max(np.abs(mix))


def _synth_nonvocals_clip(rng, bundle, duration_s):
    t = np.arange(int(duration_s * CANONICAL_RATE)) / CANONICAL_RATE
    bed = _bed_signal(rng, t, bundle)
    base = bundle["f0"] * 2.0 ** (rng.uniform(-2.0, 2.0) / 12.0)
    melody = _note_track(rng, t, base, note_dur_range=(1.0, 2.2))
    wobble_rate = rng.uniform(0.4, 2.0)  # mild life, still below 4 Hz
    # Sustained material still gets phrased softly: a slow, shallow
    # articulation gate keeps non-vocal run lengths finite so the two
    # Markov models differ in degree rather than in kind.
    articulation = _syllable_gate(rng, t, rate=rng.uniform(0.8, 2.5),
                                  floor=rng.uniform(0.15, 0.5))
    if rng.random() < 0.7:
        tone = _harmonic_stack(rng, t, melody, bundle, vibrato_cents=0.0,
                               tremolo_depth=0.0, envelope_mod_rate=wobble_rate,
                               envelope_mod_depth=rng.uniform(0.03, 0.12))
        tone /= np.max(np.abs(tone))
        tone *= articulation
        mix = tone + 10.0 ** (bundle["bed_db"] / 20.0) * bed
    else:
        faint = _harmonic_stack(rng, t, melody, bundle, vibrato_cents=0.0,
                                tremolo_depth=0.0, envelope_mod_rate=wobble_rate,
                                envelope_mod_depth=rng.uniform(0.03, 0.12))
        faint /= np.max(np.abs(faint))
        mix = bed + 10.0 ** (rng.uniform(-20.0, -10.0) / 20.0) * faint * articulation
    return 0.85 * mix / np.max(np.abs(mix))


def synth_generate(n_vocals: int, n_nonvocals: int, n_artists: int,
                   duration_s: float, rng, out_dir) -> Manifest:
    """Write WAV clips plus a manifest for a synthetic two-class dataset.

    Vocals clips carry a harmonic source with 5-7 Hz pitch vibrato and
    tremolo plus a slow formant-like envelope wobble over a background bed;
    non-vocals clips are vibrato-free sustained tones or noise beds. Every
    artist is one timbre bundle shared by its clips. Deterministic: the
    same seed produces byte-identical WAVs.
    """
    if min(n_vocals, n_nonvocals, n_artists) < 1:
        raise ValueError("counts must be at least 1")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    out_dir = Path(out_dir)
    audio_dir = out_dir / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)

    bundles = [_artist_bundle(rng) for _ in range(n_artists)]
    total = n_vocals + n_nonvocals
    artist_of = np.empty(total, dtype=np.int64)
    artist_of[rng.permutation(total)] = np.arange(total) % n_artists

    records = []
    for i in range(total):
        is_vocals = i < n_vocals
        rid = "clip%04d" % i
        bundle = bundles[artist_of[i]]
        if is_vocals:
            samples = _synth_vocals_clip(rng, bundle, duration_s)
            tags = [str(rng.choice(VOCALS_TAG_CHOICES))]
        else:
            samples = _synth_nonvocals_clip(rng, bundle, duration_s)
            tags = ["no.singing"]
        tags += list(rng.choice(DECORATION_TAGS,
                                size=rng.integers(1, 3), replace=False))
        rel = "audio/%s.wav" % rid
        save_wav(out_dir / rel, AudioClip(id=rid, samples=samples,
                                          sample_rate=CANONICAL_RATE))
        records.append(ManifestRecord(id=rid, path=rel,
                                      artist="artist%03d" % artist_of[i],
                                      raw_tags=tuple(tags)))
    manifest = Manifest(name="synthetic", root=out_dir, records=tuple(records))
    save_manifest(out_dir / "manifest.tsv", manifest)
    return manifest
