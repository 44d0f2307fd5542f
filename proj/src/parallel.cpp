#include "diffest/parallel.hpp"

namespace diffest {

ExecConfig& exec_config() {
  static ExecConfig config;
  return config;
}

}  // namespace diffest
