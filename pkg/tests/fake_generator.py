"""Minimal out-of-process generator for adapter tests.

Reads {"instructions", "directive", "max_tokens"} from stdin and answers
{"text": ...}. Understands the "begin with" directive form: echoes the
quoted text and appends filler sentences.
"""

import json
import re
import sys


def main():
    request = json.load(sys.stdin)
    directive = request["directive"]
    quoted = re.findall(r'"([^"]*)"', directive)
    beginning = quoted[0] if quoted else "Fallback opening line."
    filler = "Grelvix morwand topple quen. Sarnolt brevick unmoored plim."
    json.dump({"text": f"{beginning} {filler}"}, sys.stdout)


if __name__ == "__main__":
    main()
