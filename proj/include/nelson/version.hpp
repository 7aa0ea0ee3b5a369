#pragma once

namespace nelson {

/// Library version, recorded into run manifests so outputs are traceable to
/// the code that produced them.
inline constexpr const char* version_string = "1.0.0";

}  // namespace nelson
