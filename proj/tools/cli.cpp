#include "cli.hpp"

#include <csignal>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <pthread.h>

#include "nmt/archive.hpp"
#include "nmt/bleu.hpp"
#include "nmt/bpe.hpp"
#include "nmt/data.hpp"
#include "nmt/errors.hpp"
#include "nmt/kv_config.hpp"
#include "nmt/server.hpp"
#include "nmt/trainer.hpp"
#include "nmt/translator.hpp"
#include "nmt/vocab.hpp"

namespace nmt::cli {
namespace {

struct DecodeFlags {
  std::size_t beam = 4;
  double alpha = 0.6;
  std::size_t max_steps = 128;
  std::size_t budget = kDefaultTokenBudget;

  void add_to(CLI::App &cmd) {
    cmd.add_option("--beam", beam, "Beam size")->capture_default_str();
    cmd.add_option("--alpha", alpha, "Length-penalty exponent")->capture_default_str();
    cmd.add_option("--max-steps", max_steps, "Maximum decode steps")->capture_default_str();
    cmd.add_option("--budget", budget, "Token budget per decoding batch")->capture_default_str();
  }
  DecodeConfig config() const { return {beam, alpha, max_steps}; }
};

void write_lines(const std::string &path, const std::vector<std::string> &lines,
                 std::ostream &fallback) {
  if (path.empty()) {
    for (const auto &l : lines) fallback << l << '\n';
    return;
  }
  std::ofstream out(path);
  if (!out) throw IoError(path, "cannot open for writing");
  for (const auto &l : lines) out << l << '\n';
  if (!out) throw IoError(path, "write failed");
}

// Blocks SIGINT/SIGTERM and stops the server when one arrives, letting
// in-flight requests finish.
void serve_until_signalled(TranslationServer &server) {
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);
  std::jthread waiter([&](std::stop_token) {
    int sig = 0;
    sigwait(&signals, &sig);
    server.stop();
  });
  server.serve();
  if (server.running()) server.stop();
  // Wake the waiter if the server stopped on its own.
  pthread_kill(waiter.native_handle(), SIGTERM);
}

}  // namespace

int run(int argc, const char *const *argv, std::ostream &out, std::ostream &err) {
  CLI::App app{"Neural machine translation toolkit", "nmt"};
  app.require_subcommand(1);

  auto *learn = app.add_subcommand("learn-bpe", "Learn BPE merge rules from text");
  std::vector<std::string> learn_inputs;
  std::size_t merges = kDefaultMergeCount;
  std::string learn_output;
  learn->add_option("--input", learn_inputs, "Training text files")->required()->check(CLI::ExistingFile);
  learn->add_option("--merges", merges, "Number of merges")->capture_default_str();
  learn->add_option("--output", learn_output, "Merge-rule file to write")->required();

  auto *vocab_cmd = app.add_subcommand("build-vocab", "Build a vocabulary from BPE-segmented corpora");
  std::string vocab_bpe, vocab_output;
  std::vector<std::string> vocab_corpora, vocab_langs;
  vocab_cmd->add_option("--bpe", vocab_bpe, "Merge-rule file")->required()->check(CLI::ExistingFile);
  vocab_cmd->add_option("--corpus", vocab_corpora, "Text files")->required()->check(CLI::ExistingFile);
  vocab_cmd->add_option("--lang", vocab_langs, "Language codes whose tags to reserve");
  vocab_cmd->add_option("--output", vocab_output, "Vocabulary file to write")->required();

  auto *train_cmd = app.add_subcommand("train", "Train a model");
  std::string model_config, data_config, train_config, output_dir;
  train_cmd->add_option("--model-config", model_config)->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--data-config", data_config)->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--train-config", train_config)->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--output-dir", output_dir)->required();

  auto *translate_cmd = app.add_subcommand("translate", "Translate a text file");
  std::string tr_model, tr_input, tr_output, tr_lang;
  DecodeFlags tr_flags;
  translate_cmd->add_option("--model", tr_model, "Model archive")->required()->check(CLI::ExistingFile);
  translate_cmd->add_option("--input", tr_input, "One sentence per line")->required()->check(CLI::ExistingFile);
  translate_cmd->add_option("--output", tr_output, "Output file (default: stdout)");
  translate_cmd->add_option("--src-lang", tr_lang, "Source language code");
  tr_flags.add_to(*translate_cmd);

  auto *bleu_cmd = app.add_subcommand("eval-bleu", "Corpus BLEU as JSON");
  std::string hyp_path, ref_path;
  bleu_cmd->add_option("--hyp", hyp_path)->required()->check(CLI::ExistingFile);
  bleu_cmd->add_option("--ref", ref_path)->required()->check(CLI::ExistingFile);

  auto *export_cmd = app.add_subcommand("export", "Re-package a checkpoint as a serving archive");
  std::string ckpt, export_output, export_name;
  export_cmd->add_option("--checkpoint", ckpt)->required()->check(CLI::ExistingFile);
  export_cmd->add_option("--output", export_output)->required();
  export_cmd->add_option("--name", export_name, "Model name recorded in the archive");

  auto *serve_cmd = app.add_subcommand("serve", "HTTP translation service");
  std::string serve_model, bind = "127.0.0.1:8080";
  ServerOptions serve_options;
  DecodeFlags serve_flags;
  serve_cmd->add_option("--model", serve_model)->required()->check(CLI::ExistingFile);
  serve_cmd->add_option("--bind", bind, std::string("host:port (overridden by ") + kBindEnvVar + ")")
      ->capture_default_str();
  serve_cmd->add_option("--max-sentences", serve_options.max_sentences)->capture_default_str();
  serve_cmd->add_option("--max-length", serve_options.max_words, "Maximum words per sentence")
      ->capture_default_str();
  serve_cmd->add_option("--threads", serve_options.threads)->capture_default_str();
  serve_flags.add_to(*serve_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError &e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*learn) {
      std::vector<std::string> lines;
      for (const auto &f : learn_inputs) {
        auto l = read_lines(f);
        lines.insert(lines.end(), l.begin(), l.end());
      }
      const BpeModel bpe = learn_bpe(lines, merges);
      bpe.save(learn_output);
      err << "learned " << bpe.size() << " merges\n";
    } else if (*vocab_cmd) {
      const BpeModel bpe = BpeModel::load(vocab_bpe);
      std::vector<SegmentedCorpus> corpora;
      for (const auto &f : vocab_corpora) {
        SegmentedCorpus seg;
        for (const auto &line : read_lines(f)) seg.push_back(bpe.segment(line));
        corpora.push_back(std::move(seg));
      }
      const Vocabulary vocab = build_shared_vocab(corpora, vocab_langs);
      vocab.save(vocab_output);
      err << "vocabulary of " << vocab.size() << " tokens\n";
    } else if (*train_cmd) {
      const DataConfig data_cfg = DataConfig::load(data_config);
      const TrainingData data = TrainingData::load(data_cfg);
      ModelConfig mc = ModelConfig::from_config(KeyValueConfig::load(model_config));
      if (mc.source_vocab_size == 0) mc.source_vocab_size = data.source_vocab.size();
      if (mc.target_vocab_size == 0) mc.target_vocab_size = data.target_vocab.size();
      if (mc.source_vocab_size != data.source_vocab.size() ||
          mc.target_vocab_size != data.target_vocab.size())
        throw ConfigError("model vocabulary sizes do not match the vocabulary files");
      TrainRun run = TrainRun::from_config(KeyValueConfig::load(train_config));
      run.checkpoint_dir = output_dir;
      Transformer<float> model(mc, run.seed);
      const TrainResult result = train(model, data, run);
      std::filesystem::create_directories(output_dir);
      save_model(model, data.source_vocab, data.target_vocab, data.source_bpe,
                 data.target_bpe, data.metadata, std::filesystem::path(output_dir) / "final.vnmt");
      err << "trained " << result.steps << " steps";
      if (result.best_bleu) err << ", best validation BLEU " << *result.best_bleu;
      err << '\n';
    } else if (*translate_cmd) {
      const ModelBundle bundle = load_model(tr_model);
      const Translator translator(bundle);
      const auto lines = read_lines(tr_input);
      write_lines(tr_output, translator.translate(lines, tr_lang, tr_flags.config(), tr_flags.budget), out);
    } else if (*bleu_cmd) {
      const auto hyp = read_lines(hyp_path);
      const auto ref = read_lines(ref_path);
      out << corpus_bleu(std::span<const std::string>(hyp), std::span<const std::string>(ref)).to_json()
          << '\n';
    } else if (*export_cmd) {
      ModelBundle bundle = load_model(ckpt);
      if (!export_name.empty()) bundle.metadata.name = export_name;
      save_model(bundle, export_output);
      err << "exported " << model_version(bundle.model, bundle.metadata.name) << '\n';
    } else if (*serve_cmd) {
      const ModelBundle bundle = load_model(serve_model);
      const auto [host, port] = parse_bind_address(effective_bind_address(bind));
      serve_options.host = host;
      serve_options.port = port;
      serve_options.decode = serve_flags.config();
      serve_options.budget_tokens = serve_flags.budget;
      TranslationServer server(bundle, serve_options);
      const int bound = server.bind();
      err << "serving " << bundle.model_version << " on " << host << ':' << bound << std::endl;
      serve_until_signalled(server);
    }
  } catch (const Error &e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception &e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace nmt::cli
