#include "mop/prompts.hpp"

#include <algorithm>
#include <array>

#include "mop/error.hpp"

namespace mop {

namespace {

constexpr std::array<const char*, 7> kKnownPlaceholders = {"persona",  "example", "example_context", "context",
                                                            "steer",    "examples", "personas"};

bool known_placeholder(const std::string& name) {
    return std::any_of(kKnownPlaceholders.begin(), kKnownPlaceholders.end(),
                       [&](const char* k) { return name == k; });
}

// Llama-3 instruct framing, as used with the 8B instruct base model.
std::string llama3(const std::string& system, const std::string& user, const std::string& assistant_tail) {
    return "<|begin_of_text|><|start_header_id|>system<|end_header_id|>\n\n" + system +
           "<|eot_id|><|start_header_id|>user<|end_header_id|>\n\n" + user + assistant_tail;
}

const std::string kAssistant = "<|eot_id|><|start_header_id|>assistant<|end_header_id|>\n\n";
const std::string kEmbody = "You embody the persona in the description to complete the tasks.";
const std::string kHelpful = "You are a helpful AI assistant";

std::string frame(TemplateFormat fmt, const std::string& system, const std::string& user,
                  const std::string& chat_tail, const std::string& plain_tail) {
    if (fmt == TemplateFormat::llama3_chat) return llama3(system, user, chat_tail);
    return system + "\n\n" + user + plain_tail;
}

struct TaskText {
    std::string generation_user;
    std::string generation_chat_tail;
    std::string zero_shot_user;
    std::string synthesis_user;
    std::string mixing_user;
    std::string steering;
};

std::string synthesis_body(const std::string& intro, const std::string& examples_header,
                           const std::string& example_personas, const std::string& list_header,
                           const std::string& closing) {
    return intro + "\n\n" + examples_header + "\n" + example_personas + "\n\n" + list_header + "\n{examples}\n\n" +
           closing;
}

const std::string kMixingBody =
    "Given a list of persona descriptions of a reporter and a list of news blurbs he/she has written, construct a "
    "concise persona description that reflects the reporter's primary focus, style, and thematic interests.\n\n"
    "Example persona descriptions:\n"
    "You are a sports reporter, specializing in baseball news, with a focus on the Major League Baseball (MLB) "
    "playoffs and postseason games.\n\n"
    "Inputs:\n"
    "1. List of persona descriptions: A list of general persona characteristics previously associated with the "
    "reporter.\n"
    "2. List of news blurbs: A selection of sample news blurbs authored by the reporter, which reveal their tone, "
    "thematic focus, and writing style.\n\n"
    "Using the inputs, generate a short persona description that synthesizes their focus, preferences, and "
    "stylistic tendencies into a single cohesive statement.\n\n"
    "List of persona descriptions:\n{personas}\n\n"
    "List of news blurbs:\n{examples}\n\n"
    "Please provide the short persona description.";

// Review tasks reuse the reporter mixing prompt with the nouns swapped.
std::string review_mixing_body(const std::string& writer, const std::string& example_persona) {
    return "Given a list of persona descriptions of a " + writer + " and a list of reviews he/she has written, "
           "construct a concise persona description that reflects the " + writer +
           "'s preferences, writing style, and thematic interests.\n\n"
           "Example persona descriptions:\n" + example_persona + "\n\n"
           "Inputs:\n"
           "1. List of persona descriptions: A list of general persona characteristics previously associated with "
           "the " + writer + ".\n"
           "2. List of reviews: A selection of sample reviews authored by the " + writer +
           ", which reveal their tone, thematic focus, and writing style.\n\n"
           "Using the inputs, generate a short persona description that synthesizes their focus, preferences, and "
           "stylistic tendencies into a single cohesive statement.\n\n"
           "List of persona descriptions:\n{personas}\n\n"
           "List of reviews:\n{examples}\n\n"
           "Please provide the short persona description.";
}

const std::string kMovieExamples =
    "You are a movie critic, specializing in horror movies and independent films with a focus on cinematography "
    "and storytelling.\n"
    "You are a casual viewer who enjoys action-packed films and writes personal and informal reviews.";

const std::string kMovieSynthesisIntro =
    "Given a list of movie review written by a viewer, construct a concise persona description that reflects the "
    "review's preferences, writing style, and thematic interests.";

const std::string kMovieSynthesisClosing =
    "Generate a short persona description that synthesizes their focus, preferences, and stylistic tendencies into "
    "a single cohesive statement.";

TaskText task_text(const std::string& task) {
    if (task == "agnews") {
        return {
            "{persona}\n\nYou have written the following news blurb: {example}\n\n{steer}Please write a short news "
            "blurb similar to the above blurb.",
            "<|eot_id|> <|start_header_id|>assistant<|end_header_id|>\n\n",
            "{steer}Please write a short news blurb.",
            synthesis_body("Given a list of news blurbs written by a reporter, construct a concise persona description "
                           "that reflects the reporter's primary focus, style, and thematic interests.",
                           "Example persona descriptions:",
                           "You are a sports reporter, specializing in baseball news, with a focus on the Major League "
                           "Baseball (MLB) playoffs and postseason games.",
                           "List of news blurbs:",
                           "Generate a short persona description that synthesizes their focus, preferences, and "
                           "stylistic tendencies into a single cohesive statement."),
            kMixingBody,
            "",
        };
    }
    if (task == "yelp") {
        return {
            "{persona}\n\nYour review for the restaurant {context}: {example}\n\n{steer}Please write a short review for "
            "the restaurant {context}, similar to the above review:",
            "<|eot_id|> <|start_header_id|>assistant<|end_header_id|>\n\n",
            "{steer}Please write a short review for the restaurant {context}:",
            synthesis_body("Given a list of restaurant review written by a customer, construct a concise persona "
                           "description that reflects the customer's preferences, writing style, and interests.",
                           "Examples of Persona Descriptions:",
                           "You are a food critic, specializing in fine dining and gourmet cuisine with a focus on "
                           "presentation and taste.\n"
                           "You are a casual diner who enjoys comfort food and writes personal and informal reviews.",
                           "List of reviews:",
                           "Generate a short persona description that synthesizes their interests, preferences, and "
                           "writing stylistic tendencies into a single cohesive statement."),
            review_mixing_body("customer",
                               "You are a food critic, specializing in fine dining and gourmet cuisine with a focus on "
                               "presentation and taste."),
            "You visited the restaurant {context} and had {sentiment} impression. ",
        };
    }
    if (task == "sst2") {
        return {
            "{persona}\n\nYou have written the following review: {example}\n\n{steer}Please write a review sentence, "
            "similar to the above review:",
            "<|eot_id|><|start_header_id|>assistant<|end_header_id|> \n\n<|start_header_id|>assistant<|end_header_id|>"
            "\n\n",
            "{steer}Please write a review sentence:",
            synthesis_body(kMovieSynthesisIntro, "Examples of Persona Descriptions:", kMovieExamples,
                           "List of reviews:", kMovieSynthesisClosing),
            review_mixing_body("viewer", "You are a movie critic, specializing in horror movies and independent films "
                                         "with a focus on cinematography and storytelling."),
            "You watched a movie and had {sentiment} impression. ",
        };
    }
    if (task == "imdb") {
        return {
            "{persona}\n\nYou have written the following review for the movie {context}: {example}\n\n{steer}Please "
            "write a review for the movie {context}, similar to the above review:",
            kAssistant,
            "{steer}Please write a review for the movie {context}:",
            synthesis_body(kMovieSynthesisIntro, "Examples of Persona Descriptions:", kMovieExamples,
                           "List of reviews:", kMovieSynthesisClosing),
            review_mixing_body("viewer", "You are a movie critic, specializing in horror movies and independent films "
                                         "with a focus on cinematography and storytelling."),
            "You watched the movie {context} and had {sentiment} impression. ",
        };
    }
    throw ValidationError("unknown task '" + task + "'");
}

const std::string kClassifyBody =
    "Given a persona description of a reporter, choose the specialization of the personas: world news, sports news, "
    "business news, sci/tech news.\n\n"
    "Persona description: You are a technology reporter, specializing in the intersection of hardware and software, "
    "with a focus on the PC industry, Linux, and major tech companies like Microsoft, Apple, and IBM.\n"
    "Options:\nA. world news\nB. sports news\nC. business news\nD. sci/tech news\nAnswer: D\n\n"
    "Persona description: {persona}\n"
    "Options:\nA. world news\nB. sports news\nC. business news\nD. sci/tech news\nAnswer: ";

}  // namespace

PromptTemplate::PromptTemplate(std::string text) : text_(std::move(text)) {
    std::string literal;
    for (std::size_t i = 0; i < text_.size(); ++i) {
        const char c = text_[i];
        if (c == '{' && i + 1 < text_.size() && text_[i + 1] == '{') {
            literal.push_back('{');
            ++i;
        } else if (c == '}' && i + 1 < text_.size() && text_[i + 1] == '}') {
            literal.push_back('}');
            ++i;
        } else if (c == '{') {
            const std::size_t close = text_.find('}', i);
            if (close == std::string::npos) throw ValidationError("unterminated placeholder in template");
            std::string name = text_.substr(i + 1, close - i - 1);
            if (!known_placeholder(name)) throw ValidationError("unknown placeholder {" + name + "} in template");
            if (!literal.empty()) pieces_.push_back({false, std::move(literal)});
            literal.clear();
            pieces_.push_back({true, std::move(name)});
            i = close;
        } else {
            literal.push_back(c);
        }
    }
    if (!literal.empty()) pieces_.push_back({false, std::move(literal)});
}

std::string PromptTemplate::render(const std::map<std::string, std::string>& vars) const {
    std::string out;
    for (const auto& p : pieces_) {
        if (!p.is_placeholder) {
            out += p.value;
            continue;
        }
        auto it = vars.find(p.value);
        if (it == vars.end()) throw ValidationError("no value for placeholder {" + p.value + "}");
        out += it->second;
    }
    return out;
}

bool PromptTemplate::uses(const std::string& name) const {
    return std::any_of(pieces_.begin(), pieces_.end(),
                       [&](const Piece& p) { return p.is_placeholder && p.value == name; });
}

TemplateFormat parse_template_format(const std::string& s) {
    if (s == "plain") return TemplateFormat::plain;
    if (s == "llama3-chat") return TemplateFormat::llama3_chat;
    throw ValidationError("unknown template format '" + s + "' (expected plain or llama3-chat)");
}

std::vector<std::string> known_tasks() { return {"agnews", "yelp", "sst2", "imdb"}; }

TaskTemplates task_templates(const std::string& task, TemplateFormat fmt) {
    const TaskText t = task_text(task);
    const std::string persona_tail = kAssistant + kPersonaMarker;
    const std::string plain_persona_tail = std::string("\n\n") + kPersonaMarker;

    TaskTemplates out;
    out.task = task;
    out.generation = PromptTemplate(frame(fmt, kEmbody, t.generation_user, t.generation_chat_tail, " "));
    out.zero_shot = PromptTemplate(frame(fmt, kHelpful, t.zero_shot_user, kAssistant, " "));
    out.persona_synthesis = PromptTemplate(frame(fmt, kHelpful, t.synthesis_user, persona_tail, plain_persona_tail));
    out.mixing = PromptTemplate(frame(fmt, "You are a highly capable and insightful AI assistant", t.mixing_user,
                                      persona_tail, plain_persona_tail));
    if (task == "agnews") {
        out.classification = PromptTemplate(frame(fmt, kHelpful, kClassifyBody, kAssistant, ""));
        out.label_options = {"world news", "sports news", "business news", "sci/tech news"};
    }
    out.steering_clause = t.steering;
    return out;
}

std::string build_prompt(const PromptTemplate& tpl, const PromptBundle& b) {
    std::map<std::string, std::string> vars;
    vars["persona"] = b.persona ? b.persona->description : "";
    vars["example"] = b.exemplar ? b.exemplar->response : "";
    vars["example_context"] = b.exemplar ? b.exemplar->context : "";
    vars["context"] = b.context;
    vars["steer"] = b.steer;
    return tpl.render(vars);
}

std::string numbered_list(const std::vector<std::string>& items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += '\n';
        out += std::to_string(i + 1) + ". " + items[i];
    }
    return out;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string strip_persona_marker(const std::string& generated) {
    const auto pos = generated.rfind(kPersonaMarker);
    if (pos == std::string::npos) return trim(generated);
    return trim(generated.substr(pos + std::string(kPersonaMarker).size()));
}

}  // namespace mop
