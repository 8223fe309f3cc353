#include "flowadapter/eval/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "flowadapter/core/errors.hpp"

namespace fa::eval {

std::string DensityReport::to_string() const {
  std::ostringstream os;
  os << "lang " << lang << "\ncount " << count << "\nmean_log_likelihood " << mean << "\nmin_log_likelihood " << min
     << "\nmax_log_likelihood " << max << "\ncross_mean_log_likelihood " << cross_mean << '\n';
  return os.str();
}

DensityReport density_report(const seq2seq::TranslationModel& model, std::span<const seq2seq::TokenSequence> seqs,
                             int lang) {
  if (seqs.empty()) throw UsageError("density_report needs at least one sentence");
  if (!model.has_adapter()) throw UsageError("density_report needs a model with flow adapters");
  const int other = 1 - lang;
  const auto& own = model.flow(lang);
  const auto& target = model.flow(other);
  DensityReport r;
  r.lang = model.vocab().language_name(lang);
  r.min = std::numeric_limits<double>::infinity();
  r.max = -r.min;
  double sum = 0.0, cross = 0.0;
  ag::NoGradGuard no_grad;
  for (std::size_t start = 0; start < seqs.size(); start += 64) {
    auto chunk = seqs.subspan(start, std::min<std::size_t>(64, seqs.size() - start));
    const ag::Var z = model.encode(seq2seq::make_batch(chunk)).latent;
    const Matrix lp = flow::log_prob(own, model.base(), z).value();
    const Matrix xp = flow::log_prob(target, model.base(), flow::transform_latent(own, target, z)).value();
    for (int i = 0; i < lp.rows(); ++i) {
      sum += lp(i, 0);
      cross += xp(i, 0);
      r.min = std::min(r.min, lp(i, 0));
      r.max = std::max(r.max, lp(i, 0));
    }
  }
  r.count = static_cast<long>(seqs.size());
  r.mean = sum / r.count;
  r.cross_mean = cross / r.count;
  if (!std::isfinite(r.mean) || !std::isfinite(r.cross_mean)) throw NumericError("density report is not finite");
  return r;
}

double copy_rate(const seq2seq::Vocabulary& vocab, std::span<const seq2seq::TokenSequence> hyps, int source_lang) {
  if (hyps.empty()) return 0.0;
  long copied = 0;
  for (const auto& h : hyps) {
    const auto in = h.interior();
    if (std::any_of(in.begin(), in.end(), [&](int id) { return vocab.language_of(id) == source_lang; })) ++copied;
  }
  return static_cast<double>(copied) / hyps.size();
}

}  // namespace fa::eval
