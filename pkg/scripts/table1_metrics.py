"""Engagement metrics for a confusion matrix consistent with the published table.

Of 100 disengaged windows 62 are caught; of 441 engaged windows 333 are
caught. The weighted average uses the test supports 145/609.
"""
from engage.engagement import compute_metrics


def main():
    truth = ["disengaged"] * 100 + ["engaged"] * 441
    pred = ["disengaged"] * 62 + ["engaged"] * 38 + ["disengaged"] * 108 + ["engaged"] * 333
    m = compute_metrics(pred, truth, supports={"disengaged": 145, "engaged": 609})
    print(f"{'':14s}{'recall':>8s}{'precision':>11s}{'f1':>7s}")
    for name in ("disengaged", "engaged"):
        c = m.per_class[name]
        print(f"{name:14s}{c.recall:8.2f}{c.precision:11.2f}{c.f1:7.2f}")
    w = m.weighted
    print(f"{'weighted avg':14s}{w['recall']:8.2f}{w['precision']:11.2f}{w['f1']:7.2f}")


if __name__ == "__main__":
    main()
