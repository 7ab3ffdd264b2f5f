#pragma once

#include <string>
#include <vector>

namespace abn {

// Entry point behind the `abn` binary; callable in-process from tests.
int run_cli(const std::vector<std::string>& args);

}  // namespace abn
