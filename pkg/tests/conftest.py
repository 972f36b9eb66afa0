from cases import VERDICTS


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(VERDICTS):
        parts = VERDICTS[crit]
        ok = all(p[1] for p in parts)
        body = "; ".join(f"{name} {'ok' if good else 'FAIL'}: {detail}"
                         for name, good, detail in parts)
        terminalreporter.write_line(f"criterion {crit}: {'PASS' if ok else 'FAIL'} ({body})")
