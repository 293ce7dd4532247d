#ifndef FIBERLOOP_CLI_HPP_
#define FIBERLOOP_CLI_HPP_

#include <string>
#include <vector>

namespace fiberloop {

// Routes to dataset gen / train / eval / experiment / render / config.
// Returns the process exit status: 0 success, 1 runtime failure, 2 usage
// error. args excludes the program name.
int dispatch(const std::vector<std::string>& args);

}  // namespace fiberloop

#endif  // FIBERLOOP_CLI_HPP_
