#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mop/corpus.hpp"

namespace mop {

/// `{name}` placeholder substitution; `{{` and `}}` are literal braces.
///
/// Only known placeholders are accepted: persona, example, example_context,
/// context, steer, examples, personas.
class PromptTemplate {
public:
    PromptTemplate() = default;
    explicit PromptTemplate(std::string text);

    /// Every placeholder must have a value in `vars`.
    std::string render(const std::map<std::string, std::string>& vars) const;

    bool uses(const std::string& name) const;
    const std::string& text() const noexcept { return text_; }
    bool empty() const noexcept { return text_.empty(); }

private:
    struct Piece {
        bool is_placeholder;
        std::string value;
    };
    std::string text_;
    std::vector<Piece> pieces_;
};

enum class TemplateFormat { plain, llama3_chat };

TemplateFormat parse_template_format(const std::string& s);

/// All prompts of one task.
struct TaskTemplates {
    std::string task;
    /// {persona} {example} {context} {steer}
    PromptTemplate generation;
    /// Baseline without persona or exemplar: {context} {steer}
    PromptTemplate zero_shot;
    /// {examples}
    PromptTemplate persona_synthesis;
    /// {personas} {examples}
    PromptTemplate mixing;
    /// {persona}; only topic tasks have one.
    std::optional<PromptTemplate> classification;
    std::vector<std::string> label_options;
    /// Sentiment steering clause with {context} and {sentiment}; empty when unsupported.
    std::string steering_clause;

    bool requires_context() const { return generation.uses("context"); }
};

/// Built-in templates for agnews, yelp, sst2 and imdb.
TaskTemplates task_templates(const std::string& task, TemplateFormat format);
std::vector<std::string> known_tasks();

/// Marker the persona prompts end with; generated text after it is the description.
inline constexpr const char* kPersonaMarker = "The short persona is:";

/// One persona + exemplar + input context, the conditioning tuple of a component.
struct PromptBundle {
    const Persona* persona = nullptr;
    const Observation* exemplar = nullptr;
    std::string context;
    /// Optional sentiment/topic steering text placed before the request sentence.
    std::string steer;
};

std::string build_prompt(const PromptTemplate& tpl, const PromptBundle& bundle);

/// Renders a numbered list, one entry per line.
std::string numbered_list(const std::vector<std::string>& items);

/// Text after the last persona marker, trimmed.
std::string strip_persona_marker(const std::string& generated);
std::string trim(const std::string& s);

}  // namespace mop
