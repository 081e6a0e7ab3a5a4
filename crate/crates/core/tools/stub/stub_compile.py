# Fake compiler for pipelines without EDA tools. Emits Icarus-style
# diagnostics for a few lexical checks and writes a stub artifact.
#
# usage: stub_compile ARTIFACT SOURCE...
#
# Directives (in comments):
#   stub-compile-error: MSG   report MSG as an elaboration error on that line
#   stub-compile-hang         never exit
import os
import re
import sys
import time

STMT = re.compile(r'^(assign|input|output|inout|wire|reg|logic|integer|parameter|localparam|genvar)\b')
NEXT = re.compile(r'^(assign|input|output|inout|wire|reg|logic|integer|parameter|localparam|genvar|always|initial|endmodule|module|end|begin)\b')


def strip_comments(text):
    out = []
    i = 0
    n = len(text)
    while i < n:
        if text.startswith('//', i):
            while i < n and text[i] != '\n':
                i += 1
        elif text.startswith('/*', i):
            i += 2
            while i < n and not text.startswith('*/', i):
                if text[i] == '\n':
                    out.append('\n')
                i += 1
            i += 2
        elif text[i] == '"':
            out.append('"')
            i += 1
            while i < n and text[i] not in '"\n':
                if text[i] == '\\':
                    i += 1
                i += 1
            out.append('"')
            i += 1
        else:
            out.append(text[i])
            i += 1
    return ''.join(out)


def check(path, raw):
    errors = []
    for no, line in enumerate(raw.split('\n'), 1):
        m = re.search(r'stub-compile-error:\s*(.+)$', line)
        if m:
            errors.append('%s:%d: error: %s' % (path, no, m.group(1).strip()))
    lines = strip_comments(raw).split('\n')
    depth = 0
    pending = 0
    for no, line in enumerate(lines, 1):
        s = line.strip()
        if pending and s:
            if NEXT.match(s):
                errors.append('%s:%d: syntax error' % (path, no))
                pending = 0
            elif ';' in s:
                pending = 0
        elif depth == 0 and STMT.match(s) and ';' not in s:
            pending = no
        depth += line.count('(') - line.count(')')
        depth += line.count('[') - line.count(']')
        if depth < 0:
            errors.append('%s:%d: syntax error' % (path, no))
            depth = 0
    last = len(lines)
    if pending:
        errors.append('%s:%d: syntax error' % (path, last))
    if depth != 0:
        errors.append('%s:%d: syntax error' % (path, last))
    text = ' '.join(lines)
    modules = len(re.findall(r'\bmodule\b', text))
    endmodules = len(re.findall(r'\bendmodule\b', text))
    begins = len(re.findall(r'\bbegin\b', text))
    ends = len(re.findall(r'\bend\b', text))
    if modules != endmodules or begins != ends:
        errors.append('%s:%d: syntax error' % (path, last))
    return errors


def main():
    artifact = sys.argv[1]
    sources = sys.argv[2:]
    errors = []
    for path in sources:
        if not os.path.exists(path):
            errors.append('%s: No such file or directory' % path)
            continue
        with open(path) as f:
            raw = f.read()
        if 'stub-compile-hang' in raw:
            while True:
                time.sleep(1)
        errors.extend(check(path, raw))
    for e in errors:
        print(e)
    if errors:
        print('%d error(s) during elaboration.' % len(errors))
        sys.exit(1)
    with open(artifact, 'w') as f:
        f.write('\n'.join(sources) + '\n')


main()
