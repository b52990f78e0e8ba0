"""Runs each subcommand once and validates every JSON it emits."""

import json
import pathlib
import subprocess
import sys
import tempfile

from jsonschema import Draft202012Validator
from referencing import Registry, Resource


def main() -> int:
    cli, schema_dir = str(pathlib.Path(sys.argv[1]).resolve()), pathlib.Path(sys.argv[2])
    schemas = {p.name: json.loads(p.read_text()) for p in schema_dir.glob("*.schema.json")}
    registry = Registry().with_resources((name, Resource.from_contents(s)) for name, s in schemas.items())

    def check(doc, schema_name, label):
        validator = Draft202012Validator(schemas[schema_name], registry=registry)
        errors = sorted(validator.iter_errors(doc), key=str)
        for e in errors:
            print(f"FAIL {label}: {e.message} at {list(e.absolute_path)}")
        return not errors

    ok = True
    with tempfile.TemporaryDirectory() as tmp:
        tmp = pathlib.Path(tmp)

        def run(*args):
            out = subprocess.run([cli, *args], cwd=tmp, capture_output=True, text=True, check=True)
            return json.loads(out.stdout.strip().splitlines()[-1])

        run("gen", "--task", "figure1", "--seed", "1", "--out", "fig")
        gmm_cfg = tmp / "gmm.json"
        gmm_cfg.write_text(json.dumps({"task": {"name": "gmm", "n_per_domain": 200,
                                                "source_props": [0.6, 0.2, 0.2], "target_props": [0.2, 0.2, 0.6]},
                                       "train": {"pretrain_epochs": 2, "epochs": 2}}))
        run("gen", "--config", "gmm.json", "--seed", "2", "--out", "gmm")
        for d in ("fig", "gmm"):
            ok &= check(json.loads((tmp / d / "manifest.json").read_text()), "manifest.schema.json", f"{d} manifest")
            for side in ("source", "target"):
                doc = json.loads((tmp / d / f"{side}_mixture.json").read_text())
                ok &= check(doc, "mixture.schema.json", f"{d} {side} mixture")

        for method in ("exact1d", "sinkhorn"):
            ok &= check(run("ot", "fig/source.csv", "fig/target.csv", "--method", method), "ot_result.schema.json",
                        f"ot {method}")
        ok &= check(run("ot", "fig/source_mixture.json", "fig/target_mixture.json", "--method", "mw1"),
                    "ot_result.schema.json", "ot mw1")

        ok &= check(run("bounds", "--source", "gmm/source.csv", "--target", "gmm/target.csv", "--out", "rep"),
                    "boundreport.schema.json", "bounds stdout")
        ok &= check(json.loads((tmp / "rep" / "boundreport.json").read_text()), "boundreport.schema.json",
                    "boundreport.json")

        ok &= check(run("train", "--config", "gmm.json", "--seed", "3", "--out", "train"), "summary.schema.json",
                    "train stdout")
        ok &= check(json.loads((tmp / "train" / "summary.json").read_text()), "summary.schema.json", "summary.json")
        ok &= check(json.loads((tmp / "train" / "checkpoint.json").read_text()), "checkpoint.schema.json",
                    "checkpoint.json")
        for i, line in enumerate((tmp / "train" / "metrics.jsonl").read_text().splitlines()):
            ok &= check(json.loads(line), "metrics_record.schema.json", f"metrics line {i + 1}")

        ok &= check(run("figure1", "--n", "500", "--out", "f1"), "figure1.schema.json", "figure1")

    print("all emitted JSON validates" if ok else "schema violations found")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
