import csv

from acoustic_pretrain.core.experiments import CellResult, GridCell, SeedFailure
from acoustic_pretrain.output.report_generator import GRID_COLUMNS, ReportGenerator

def _results():
  ok = CellResult(GridCell("random init", "EER", False), dev_eers=[0.2, 0.3], eval_eers=[0.25, 0.35])
  partial = CellResult(
    GridCell("pre-trained init", "EER", True, {"training.pre_lr": 0.0005}),
    dev_eers=[0.1],
    eval_eers=[0.125],
    failures=[SeedFailure(1, "boom", 3)],
  )
  failed = CellResult(GridCell("pipe | row", "EER", True), failures=[SeedFailure(0, "x", 2)])
  return [ok, partial, failed]

def test_grid_csv_columns_and_values(tmp_path):
  path = ReportGenerator().write_grid_csv(_results(), tmp_path / "grid.csv")

  with path.open(encoding="utf-8") as f:
    rows = list(csv.reader(f))

  assert tuple(rows[0]) == GRID_COLUMNS
  assert rows[1] == ["random init", "EER", "no", "", "2", "0", "0.2500", "0.3000"]
  assert rows[2][3] == "training.pre_lr=0.0005"
  assert rows[2][4:6] == ["1", "1"]
  assert rows[3][-2:] == ["", ""]

def test_grid_markdown_table(tmp_path):
  path = ReportGenerator().write_grid_markdown("init-mode", _results(), tmp_path / "grid.md")

  text = path.read_text(encoding="utf-8")

  assert text.startswith("# Grid: init-mode")
  assert "| Setting | EER dev | EER eval |" in text
  assert "| random init | 25.00 | 30.00 |" in text
  assert "| pre-trained init | 10.00 | 12.50 (1 failed) |" in text
  assert r"| pipe \| row | failed | failed |" in text

def test_md_escape():
  assert ReportGenerator._md_escape("a|b\r\nc") == r"a\|b c"
  assert ReportGenerator._md_escape(None) == ""
