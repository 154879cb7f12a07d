#pragma once

#include <iosfwd>

namespace scribble::cli {

// Subcommands train, infer, eval, warp, gradcheck and synth. Returns 0 on
// success, 2 on usage errors (usage text on err), 1 on any other failure
// with one line "error<TAB>kind<TAB>message" on err.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace scribble::cli
