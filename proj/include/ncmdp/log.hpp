#pragma once

#include <functional>
#include <string>
#include <string_view>

namespace ncmdp {

using WarningSink = std::function<void(std::string_view)>;

/// Routes warnings to `sink`; an empty sink restores the stderr default.
void set_warning_sink(WarningSink sink);

/// Thread-safe; every message goes through the current sink.
void warn(std::string_view message);

}  // namespace ncmdp
