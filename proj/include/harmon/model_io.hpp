#pragma once

#include <iosfwd>
#include <string>

#include "harmon/pairwise.hpp"

namespace harmon {

// Versioned structured-text model document (.hmz). Numbers are written with
// 17 significant digits, field and section order is fixed, so
// save(load(save(m))) is byte-identical to save(m).
void save_model(const pairwise::PairwiseModel& model, std::ostream& out);
void save_model_file(const pairwise::PairwiseModel& model, const std::string& path);

pairwise::PairwiseModel load_model(std::istream& in, const std::string& source_name = "<stream>");
pairwise::PairwiseModel load_model_file(const std::string& path);

}  // namespace harmon
