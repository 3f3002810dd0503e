"""
Class Support Networks Tool

Обучение и оценка few-shot классификаторов (N-way K-shot) с конкурентным
вниманием, встраиванием опорных примеров класса и усреднением лучших
контрольных точек (AEML).

Примеры:
    python csnet_tool.py synth-gen --seed 0
    python csnet_tool.py train --config configs/synth_5way_1shot.json
    python csnet_tool.py eval --run runs/synth_5way_1shot --episodes 2000 --way 5 --shot 1
    python csnet_tool.py aeml --run runs/synth_5way_1shot --t 5
    python csnet_tool.py gradcheck
"""

import sys

from csnet.cli import main

if __name__ == "__main__":
    sys.exit(main())
