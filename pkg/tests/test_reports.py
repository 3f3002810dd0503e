import json

import numpy as np
import pandas as pd

from csnet.aeml import ComparisonReport
from csnet.evaluation import EvalReport
from csnet.reports import format_report_table, summarize_log, write_comparison, write_eval_report
from csnet.trainer import LogRecord, TrainingLog


def make_report(provenance="ckpt_0000100", accs=(0.6, 0.8, 0.7)):
    return EvalReport(list(accs), 5, 1, 10, 1234, provenance=provenance)


def test_eval_report_files(tmp_path):
    json_path, csv_path = write_eval_report(make_report("aeml(t=5)"), tmp_path / "reports")
    assert json_path.name == "eval_aeml_t_5__test.json"
    assert json.loads(json_path.read_text(encoding="utf-8"))["episodes"] == 3
    frame = pd.read_csv(csv_path)
    assert frame["accuracy"].tolist() == [0.6, 0.8, 0.7]


def test_report_table():
    table = format_report_table([make_report(), make_report("raw-1nn", (0.4, 0.5))])
    assert "70.00%" in table
    assert "raw-1nn" in table
    assert len(table.splitlines()) == 3


def test_comparison_files(tmp_path):
    report = ComparisonReport(5, "prob_avg", 0.80, 0.81, 0.82, 0.01, 0.02, 100, 7)
    json_path, csv_path = write_comparison(report, tmp_path)
    assert json_path.name == "compare_t5_prob_avg.json"
    assert pd.read_csv(csv_path)["acc_aeml"].tolist() == [0.81]


def test_summarize_log():
    log = TrainingLog([
        LogRecord(0, val_acc=0.2, checkpoint_id="ckpt_0000000"),
        LogRecord(1, 1.6, 1e-3),
        LogRecord(2, 1.2, 1e-3, 0.5, "ckpt_0000002"),
        LogRecord(3, 1.1, 1e-3, 0.5, "ckpt_0000003"),
    ])
    summary = summarize_log(log)
    assert summary["episodes"] == 3
    assert summary["first_loss"] == 1.6
    assert summary["last_loss"] == 1.1
    assert summary["checkpoints"] == 3
    assert summary["best_checkpoint"] == "ckpt_0000003"


def test_summarize_untrained_log():
    summary = summarize_log(TrainingLog([LogRecord(0, val_acc=0.2, checkpoint_id="ckpt_0000000")]))
    assert np.isnan(summary["first_loss"])
    assert summary["best_val_acc"] == 0.2
