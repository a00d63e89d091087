#pragma once

#include <functional>
#include <string>

namespace reachlab {

// Non-fatal diagnostics (step-size bounds, weak time-scale separation).
// Default sink writes "warning: ..." to stderr.
void warn(const std::string& message);

using WarningSink = std::function<void(const std::string&)>;
// Replace the sink; returns the previous one.
WarningSink set_warning_sink(WarningSink sink);

}  // namespace reachlab
