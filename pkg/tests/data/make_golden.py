"""Regenerate the replay fixtures: three.pcap and three.phv.jsonl.

The PHVs come from the sequential reference parser, never from the pipeline.
Run from the repository root: ``python tests/data/make_golden.py``.
"""
import json
from pathlib import Path

from pipeparse.model import fixture_path, load_parser_file
from pipeparse.oracle import PacketSpec, gen_packet, reference_parse
from pipeparse.pcap import write_pcap

HERE = Path(__file__).parent
SPECS = [
    PacketSpec.of("ethernet", "ipv4", "tcp", payload=20, ipv4={"ihl": 5}),
    PacketSpec.of("ethernet", "ipv6", "ext1", "ext2", "tcp"),
    PacketSpec.of("ethernet", "ipv4", "udp", payload=100, ipv4={"ihl": 15}),
]


def main():
    g = load_parser_file(fixture_path("simple_parser.json"))
    packets = [gen_packet(g, spec, seed=i) for i, spec in enumerate(SPECS)]
    write_pcap(HERE / "three.pcap", packets)
    lines = []
    for i, p in enumerate(packets):
        lines += [json.dumps(phv.to_record()) + "\n" for phv in reference_parse(g, p, i).phvs]
    (HERE / "three.phv.jsonl").write_text("".join(lines))
    print([len(p) for p in packets])


if __name__ == "__main__":
    main()
