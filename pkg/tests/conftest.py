from collections import defaultdict

_criteria = {}
_outcomes = defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("acceptance")
        if mark is not None:
            _criteria[mark.kwargs["number"]] = mark.kwargs["title"]


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("acceptance")
    if mark is None or call.when != "call":
        return
    num = mark.kwargs["number"]
    if call.excinfo is None:
        _outcomes[num].append((item.name, "pass", ""))
    else:
        xfail = item.get_closest_marker("xfail")
        reason = xfail.kwargs.get("reason", "") if xfail else str(call.excinfo.value).splitlines()[0]
        _outcomes[num].append((item.name, "fail", reason))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num in sorted(_criteria):
        results = _outcomes.get(num)
        if not results:
            tr.write_line(f"criterion {num:2d} NOT RUN  {_criteria[num]}")
            continue
        failed = [r for r in results if r[1] == "fail"]
        status = "FAIL" if failed else "PASS"
        line = f"criterion {num:2d} {status:4s}     {_criteria[num]}"
        if failed:
            line += f"  [{len(results) - len(failed)}/{len(results)} cases pass; " + "; ".join(
                f"{name}: {reason}" for name, _, reason in failed
            ) + "]"
        tr.write_line(line)
