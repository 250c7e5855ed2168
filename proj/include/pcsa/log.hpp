#pragma once

#include <functional>
#include <string>

namespace pcsa {

using WarningSink = std::function<void(const std::string&)>;

/// Emits a warning. The default sink prints each distinct message to stderr
/// once per process.
void warn(const std::string& message);

/// Replaces the sink; an empty function restores the default. Returns the
/// previous sink.
WarningSink set_warning_sink(WarningSink sink);

}  // namespace pcsa
