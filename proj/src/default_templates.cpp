#include "cvr/prompt_template.hpp"

namespace cvr {

// Keep in sync with templates/*.txt; a unit test compares the two.
const std::map<std::string, std::string>& default_template_texts() {
  static const std::map<std::string, std::string> texts = {
      // --- description loop -------------------------------------------------
      {"feature",
       R"(You are preparing an image captioning model to help solve a visual reasoning task.

Task:
{task_text}

Write one short instruction for the captioning model that tells it what to look for and describe in each image, so that the description is useful for this task. Reply with the instruction only.)"},
      {"generic_caption", "Describe the image in detail."},
      {"predict",
       R"(Solve the following task using the image descriptions.

Task:
{task_text}

Image descriptions:
{descriptions}

{answer_format})"},
      {"predict_icl",
       R"(Here are solved examples of similar tasks.

{icl_block}

Now solve the following task using the image descriptions.

Task:
{task_text}

Image descriptions:
{descriptions}

{answer_format})"},
      {"followup",
       R"(You act as a questioner for an image captioning model. The model has described the images of a task, and an answer was predicted from those descriptions.

Task:
{task_text}

Image descriptions:
{descriptions}

Predicted answer:
{prediction}

Ask the captioning model one follow-up question about the images that gathers the information most needed to confirm or correct this answer, for example the appearance or pose of the people and objects involved. Reply with the question only.)"},
      {"followup_retry", "Reply with one question for the captioning model, ending with a question mark."},
      {"revise",
       R"(Question: {query}
Context: {task_text}
Describe the image so that the question is answered.)"},
      {"revise_llm",
       R"(Turn the follow-up question below into one instruction for an image captioning model, keeping it focused on the task.

Task:
{task_text}

Follow-up question:
{query}

Reply with the instruction only.)"},
      {"format_reminder", "Your previous reply could not be read. {answer_format}"},
      {"format_mcq", R"(Reply with the letter of the best option on the last line, in the form "Answer: <letter>".)"},
      {"format_winogavil",
       R"(Select every option that fits and reply on the last line in the form "Answer: <letter>, <letter>".)"},
      {"format_winoground",
       R"(Match each caption to the image it describes and each image to the caption that describes it. Reply on the last line in the form "Answer: A-><image number>, B-><image number>; 1-><caption letter>, 2-><caption letter>".)"},
      {"format_vcr",
       R"(Choose the best answer and the rationale that best supports it. Reply with two lines: "Answer: <letter>" and "Rationale: <letter>".)"},
      {"format_whoops",
       R"(Explain in one or two sentences what is unusual about the image. Reply in the form "Answer: <explanation>".)"},

      // --- in-context examples ---------------------------------------------
      {"icl_example", "Example {index}:\n{example}\n{answer}"},
      {"icl_delimiter", "---"},

      // --- comparison judging ----------------------------------------------
      {"direct",
       R"(Compare two descriptions of the same image for the task {task}.
Option A: {option_a}
Option B: {option_b}
Decide which option is more useful for answering the task.
Return True if Option B is better than Option A; return False if Option A is better; return Equal if they are the same.)"},
      {"step1",
       R"(Compare two descriptions of the same image for the task {task}.
Option A: {option_a}
Option B: {option_b}
Step 1, Initial Perception: judge which option conveys the main content of the image more clearly at first reading.
Return True if Option B is better than Option A for this step; return False if Option A is better; return Equal if they are the same.)"},
      {"step2",
       R"(Compare two descriptions of the same image for the task {task}.
Option A: {option_a}
Option B: {option_b}
Step 2, Recognizing Incongruity: judge which option better exposes what is unusual or out of place in the scene.
Return True if Option B is better than Option A for this step; return False if Option A is better; return Equal if they are the same.)"},
      {"step3",
       R"(Compare two descriptions of the same image for the task {task}.
Option A: {option_a}
Option B: {option_b}
Step 3, Contextual Analysis: judge which option gives more context for why the scene looks the way it does.
Return True if Option B is better than Option A for this step; return False if Option A is better; return Equal if they are the same.)"},
      {"step4",
       R"(Compare two descriptions of the same image for the task {task}.
Option A: {option_a}
Option B: {option_b}
Step 4, Linking to the Question: judge which option connects more clearly to what the task asks.
Return True if Option B is better than Option A for this step; return False if Option A is better; return Equal if they are the same.)"},
      {"verdict_reminder", "Reply with exactly one word: True, False, or Equal."},
      {"explanation_judge",
       R"(Compare two explanations of the same image for the task {task}.
Option A (reference): {reference}
Option B (candidate): {explanation}
Decide which option explains the image better.
Return True if Option B is better than Option A; return False if Option A is better; return Equal if they are the same.)"},
  };
  return texts;
}

}  // namespace cvr
