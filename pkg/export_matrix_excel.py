import argparse
from pathlib import Path
from typing import Any, Dict, List

import pandas as pd
from openpyxl import Workbook
from openpyxl.styles import Alignment, Font, PatternFill

from core.evaluation import METRIC_COLUMNS, best_positions

BEST_COLOR = "#C6EFCE"
HEADER_COLOR = "#DDDDDD"

NUMBER_FORMATS = {
    "R2": "0.0000",
    "MAE": "0.000000",
    "RMSE": "0.000000",
    "MAPE": "0.0000",
    "MAE_price": "0.0000",
    "RMSE_price": "0.0000",
    "MAPE_price": "0.0000",
}


def excel_hex(color: str) -> str:
    """Convert #RRGGBB or RRGGBB to openpyxl ARGB format."""
    raw = (color or "").strip().lstrip("#")
    if len(raw) != 6:
        return "FFFFFFFF"
    return f"FF{raw.upper()}"


def build_rows(table: pd.DataFrame) -> List[Dict[str, Any]]:
    """One row per model, with the metric columns it was best in."""
    best = best_positions(table)
    rows: List[Dict[str, Any]] = []
    for pos, record in enumerate(table.to_dict("records")):
        record = dict(record)
        record["best"] = [column for column, where in best.items() if where == pos]
        rows.append(record)
    return rows


def _cell_value(value: Any) -> Any:
    # undefined metrics stay blank
    return None if isinstance(value, float) and pd.isna(value) else value


def _headers(table: pd.DataFrame) -> List[str]:
    leading = [c for c in ("stock", "model") if c in table.columns]
    metrics = [c for c in METRIC_COLUMNS if c in table.columns]
    rest = [c for c in table.columns if c not in leading and c not in metrics]
    return leading + metrics + rest


def write_excel(table: pd.DataFrame, output_path: Path, sheet_title: str = "Comparison") -> None:
    wb = Workbook()
    ws = wb.active
    # sheet titles are limited to 31 characters
    ws.title = (sheet_title or "Comparison")[:31]

    headers = _headers(table)
    ws.append(headers)

    header_fill = PatternFill(fill_type="solid", fgColor=excel_hex(HEADER_COLOR))
    header_font = Font(bold=True)
    for col in range(1, len(headers) + 1):
        cell = ws.cell(row=1, column=col)
        cell.fill = header_fill
        cell.font = header_font
        cell.alignment = Alignment(horizontal="center", vertical="center")

    best_fill = PatternFill(fill_type="solid", fgColor=excel_hex(BEST_COLOR))
    for row_data in build_rows(table):
        ws.append([_cell_value(row_data.get(h)) for h in headers])
        row_idx = ws.max_row
        for col, header in enumerate(headers, start=1):
            cell = ws.cell(row=row_idx, column=col)
            if header in NUMBER_FORMATS:
                cell.number_format = NUMBER_FORMATS[header]
            if header in row_data["best"]:
                cell.fill = best_fill
                cell.font = Font(bold=True)

    for col, header in enumerate(headers, start=1):
        letter = ws.cell(row=1, column=col).column_letter
        ws.column_dimensions[letter].width = 28 if header == "model" else 14

    for row in ws.iter_rows(min_row=2, max_col=len(headers)):
        for cell in row:
            cell.alignment = Alignment(vertical="center")

    output_path = Path(output_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)
    wb.save(output_path)


def default_output_path(table_path: Path) -> Path:
    return table_path.with_suffix(".xlsx")


def main() -> None:
    parser = argparse.ArgumentParser(
        description="Export a model comparison table (CSV) to a styled Excel workbook."
    )
    parser.add_argument("table", help="Path to comparison CSV written by 'main.py matrix'.")
    parser.add_argument(
        "-o",
        "--output",
        help="Path to output .xlsx file. Defaults to '<table_stem>.xlsx'.",
    )
    args = parser.parse_args()

    table_path = Path(args.table).resolve()
    if not table_path.exists():
        raise FileNotFoundError(f"Comparison table not found: {table_path}")

    table = pd.read_csv(table_path, encoding="utf-8")
    output_path = Path(args.output).resolve() if args.output else default_output_path(table_path)
    write_excel(table, output_path, table_path.stem)

    print(f"Exported {len(table)} rows to: {output_path}")


if __name__ == "__main__":
    main()
