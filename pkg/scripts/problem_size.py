"""Print state and action counts for the bundled presets without solving."""
import sys

from dsomdp.config import build, preset


def describe(name: str) -> str:
    sc = build(preset(name))
    st, act = sc.setup.states, sc.setup.actions
    return (f"{name:<5} states {st.size:>6} (pv {st.n_pv} x soc {st.n_soc})  "
            f"offline actions {act.size(online=False):>7}  "
            f"online actions {act.size(online=True):>7}")


if __name__ == "__main__":
    for name in sys.argv[1:] or ["desk", "full"]:
        print(describe(name))
