# Fake simulator. Prints, in source order, every `stub-sim: TEXT` directive
# and every $display("...") literal without format specifiers, then writes
# an empty dump.vcd.
#
# usage: stub_sim ARTIFACT
#
# Directives:
#   stub-sim: TEXT     print TEXT
#   stub-sim-hang      never exit
#   stub-sim-exit: N   exit with status N
#   stub-expect: RE    print an ERROR line unless RE matches the sources
#                      (directive lines excluded)
import re
import sys
import time

DIRECTIVE = re.compile(r'stub-sim:\s?(.*)$')
DISPLAY = re.compile(r'\$display\s*\(\s*"([^"%]*)"\s*\)')
EXIT = re.compile(r'stub-sim-exit:\s*(\d+)')
EXPECT = re.compile(r'stub-expect:\s?(.*)$')


def main():
    with open(sys.argv[1]) as f:
        sources = [l.strip() for l in f if l.strip()]
    status = 0
    texts = []
    for path in sources:
        with open(path) as f:
            texts.append(f.read())
    body = '\n'.join(l for t in texts for l in t.split('\n') if 'stub-' not in l)
    for raw in texts:
        if 'stub-sim-hang' in raw:
            sys.stdout.flush()
            while True:
                time.sleep(1)
        for line in raw.split('\n'):
            m = EXPECT.search(line)
            if m:
                if not re.search(m.group(1).strip(), body):
                    print('ERROR: expected behaviour not found: ' + m.group(1).strip())
                continue
            m = DIRECTIVE.search(line)
            if m:
                print(m.group(1).rstrip())
                continue
            m = EXIT.search(line)
            if m:
                status = int(m.group(1))
                continue
            for lit in DISPLAY.findall(line):
                print(lit)
    with open('dump.vcd', 'w') as f:
        f.write('$date stub $end\n')
    sys.exit(status)


main()
