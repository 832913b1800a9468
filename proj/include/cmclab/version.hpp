#pragma once

namespace cmclab {

inline constexpr const char* kToolName = "cmclab";
inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kEnsembleFormat = "cmc-ensemble/1";

}  // namespace cmclab
