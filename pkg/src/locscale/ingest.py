"""Reading spectra from CSV and registering them onto a common m/z grid."""

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import DataError, InsufficientOverlap, NonMonotonic, ParseError
from .model import SpectraPanel

MIN_COVERAGE = 0.9


@dataclass
class RawSpectra:
    """Per-individual (mz, intensity) arrays, in order of first appearance."""

    ids: list
    mz: list
    intensity: list

    def __len__(self):
        return len(self.ids)

    def get(self, ident):
        k = self.ids.index(ident)
        return self.mz[k], self.intensity[k]

    @classmethod
    def from_panel(cls, panel: SpectraPanel):
        return cls(list(panel.ids), [np.array(x) for x in panel.x], [np.array(y) for y in panel.y])


def _float(text, line, column):
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise ParseError(f"column {column!r}: {text!r} is not a number", line) from None
    if not np.isfinite(value):
        raise ParseError(f"column {column!r}: non-finite value {text!r}", line)
    return value


def _finish(groups, mz_min, mz_max, log_transform):
    ids, mzs, vals = [], [], []
    for ident, (mz, val) in groups.items():
        mz = np.asarray(mz, dtype=float)
        val = np.asarray(val, dtype=float)
        order = np.argsort(mz, kind="stable")
        mz, val = mz[order], val[order]
        if np.any(np.diff(mz) <= 0):
            raise NonMonotonic(ident, f"individual {ident!r}: duplicate m/z values")
        keep = np.ones(len(mz), dtype=bool)
        if mz_min is not None:
            keep &= mz >= mz_min
        if mz_max is not None:
            keep &= mz <= mz_max
        mz, val = mz[keep], val[keep]
        if log_transform:
            if np.any(val <= -1):
                raise DataError(f"individual {ident!r}: intensities <= -1 cannot be log(1 + x) transformed")
            val = np.log1p(val)
        if len(mz) == 0:
            continue
        ids.append(ident)
        mzs.append(mz)
        vals.append(val)
    if not ids:
        raise DataError("no spectra left after range filtering")
    return RawSpectra(ids, mzs, vals)


def _rows(source):
    if isinstance(source, io.TextIOBase):
        return source.read().splitlines()
    with open(source, newline="") as fh:
        return fh.read().splitlines()


def parse_long(lines, mz_min=None, mz_max=None, log_transform=False) -> RawSpectra:
    reader = csv.reader(lines)
    try:
        header = [h.strip().lower() for h in next(reader)]
    except StopIteration:
        raise ParseError("empty file", 1) from None
    try:
        c_id, c_mz, c_int = (header.index(c) for c in ("id", "mz", "intensity"))
    except ValueError:
        raise ParseError("header must contain the columns id, mz, intensity", 1) from None
    groups = {}
    for line, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", line)
        ident = row[c_id].strip()
        mz = _float(row[c_mz], line, "mz")
        val = _float(row[c_int], line, "intensity")
        bucket = groups.setdefault(ident, ([], []))
        bucket[0].append(mz)
        bucket[1].append(val)
    return _finish(groups, mz_min, mz_max, log_transform)


def parse_wide(lines, mz_min=None, mz_max=None, log_transform=False) -> RawSpectra:
    reader = csv.reader(lines)
    header = [h.strip() for h in next(reader)]
    if not header or header[0].lower() != "mz" or len(header) < 2:
        raise ParseError("wide format needs a header 'mz,<id1>,<id2>,...'", 1)
    ids = header[1:]
    groups = {i: ([], []) for i in ids}
    for line, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", line)
        mz = _float(row[0], line, "mz")
        for ident, text in zip(ids, row[1:]):
            if text.strip() == "":
                continue
            groups[ident][0].append(mz)
            groups[ident][1].append(_float(text, line, ident))
    return _finish(groups, mz_min, mz_max, log_transform)


def read_long_csv(path, mz_min=None, mz_max=None, log_transform=False) -> RawSpectra:
    """Read a long-format CSV with columns ``id, mz, intensity``.

    Rows outside ``[mz_min, mz_max]`` are dropped, each spectrum is sorted by
    m/z, and ``log(1 + intensity)`` is applied if `log_transform` is set.
    Malformed numbers raise :class:`ParseError` carrying the line number;
    repeated m/z values within one id raise :class:`NonMonotonic`.
    """
    return parse_long(_rows(path), mz_min, mz_max, log_transform)


def read_wide_csv(path, mz_min=None, mz_max=None, log_transform=False) -> RawSpectra:
    """Read a wide CSV: an ``mz`` column followed by one intensity column per id.

    Empty cells are treated as missing for that individual.
    """
    return parse_wide(_rows(path), mz_min, mz_max, log_transform)


def read_spectra(path, mz_min=None, mz_max=None, log_transform=False) -> RawSpectra:
    """Read either CSV layout, chosen from the header."""
    lines = _rows(path)
    if not lines:
        raise ParseError("empty file", 1)
    first = [h.strip().lower() for h in next(csv.reader(lines[:1]))]
    if first and first[0] == "mz":
        return parse_wide(lines, mz_min, mz_max, log_transform)
    return parse_long(lines, mz_min, mz_max, log_transform)


def coverage(mz, grid):
    """Fraction of `grid` inside the hull of `mz`."""
    return float(np.mean((grid >= mz[0]) & (grid <= mz[-1])))


def register(raw: RawSpectra, reference_id=None, baseline_id=None) -> SpectraPanel:
    """Interpolate every spectrum onto the reference individual's m/z grid.

    Every individual must cover at least 90% of the reference grid. The
    grid is then trimmed to the intersection of all individuals' m/z
    ranges so nothing is extrapolated, and the other spectra are linearly
    interpolated at the remaining points. The reference's own intensities
    are copied unchanged.

    The baseline of the returned panel is `baseline_id` if given, otherwise
    the first individual.
    """
    if reference_id is None:
        reference_id = raw.ids[0]
    if reference_id not in raw.ids:
        raise DataError(f"reference id {reference_id!r} not found")
    ref_mz, ref_val = raw.get(reference_id)
    for ident, mz in zip(raw.ids, raw.mz):
        cov = coverage(mz, ref_mz)
        if cov < MIN_COVERAGE:
            raise InsufficientOverlap(ident, cov)
    lo = max(mz[0] for mz in raw.mz)
    hi = min(mz[-1] for mz in raw.mz)
    keep = (ref_mz >= lo) & (ref_mz <= hi)
    grid = ref_mz[keep]
    if len(grid) < 3:
        raise DataError("fewer than three reference points remain after trimming to the common m/z range")
    ys = []
    for ident, mz, val in zip(raw.ids, raw.mz, raw.intensity):
        if ident == reference_id:
            ys.append(ref_val[keep])
        elif len(mz) == len(grid) and np.array_equal(mz, grid):
            ys.append(val)
        else:
            ys.append(np.interp(grid, mz, val))
    base = _baseline_index(raw, baseline_id)
    return SpectraPanel([grid] * len(raw.ids), ys, ids=raw.ids, baseline_index=base)


def _baseline_index(raw, baseline_id):
    if baseline_id is None:
        return 0
    if str(baseline_id) not in raw.ids:
        raise DataError(f"baseline id {baseline_id!r} not found")
    return raw.ids.index(str(baseline_id))


def panel_to_csv(panel: SpectraPanel) -> str:
    """CSV text of a panel: wide when registered, long otherwise.

    Values are written with ``repr`` so reading them back is lossless.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if panel.registered:
        writer.writerow(["mz"] + list(panel.ids))
        cols = np.vstack(panel.y)
        for t, mz in enumerate(panel.x[0]):
            writer.writerow([repr(float(mz))] + [repr(float(v)) for v in cols[:, t]])
    else:
        writer.writerow(["id", "mz", "intensity"])
        for ident, xs, ys in zip(panel.ids, panel.x, panel.y):
            for mz, v in zip(xs, ys):
                writer.writerow([ident, repr(float(mz)), repr(float(v))])
    return buf.getvalue()


def load_panel(path, baseline_id=None, **read_options) -> SpectraPanel:
    """Read a CSV straight into a panel without registration."""
    raw = read_spectra(path, **read_options)
    base = _baseline_index(raw, baseline_id)
    return SpectraPanel(raw.mz, raw.intensity, ids=raw.ids, baseline_index=base)
