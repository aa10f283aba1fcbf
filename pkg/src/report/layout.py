"""Where every artifact of an experiment lives under its output directory."""
from pathlib import Path

MANIFEST_FILE = "manifest.json"
PREDICTOR_FILE = "predictor.json"
STACKED_FILE = "stacked_deviation.json"


class OutputLayout:

    def __init__(self, root: Path | str):
        self.root = Path(root)

    @property
    def runs(self) -> Path:
        return self.root / "runs"

    @property
    def metrics(self) -> Path:
        return self.root / "metrics"

    @property
    def curves(self) -> Path:
        return self.metrics / "curves"

    @property
    def plots(self) -> Path:
        return self.root / "plots"

    @property
    def manifest(self) -> Path:
        return self.root / MANIFEST_FILE

    @property
    def predictor(self) -> Path:
        return self.metrics / PREDICTOR_FILE

    @property
    def stacked(self) -> Path:
        return self.metrics / STACKED_FILE

    def run_dir(self, size: str, method: str, seed: int) -> Path:
        return self.runs / size / f"{method}-s{seed}"

    def table(self, name: str) -> Path:
        return self.metrics / f"{name}.csv"

    def curve(self, kind: str, size: str, label: str, step: int, suffix: str = "") -> Path:
        return self.curves / kind / size / label / f"step-{step:06d}{suffix}.json"

    def relative(self, path: Path) -> str:
        return path.relative_to(self.root).as_posix()

    def series(self, kind: str, size: str, name: str) -> Path:
        return self.curves / kind / size / f"{name}.json"
