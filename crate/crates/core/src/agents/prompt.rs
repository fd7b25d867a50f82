use crate::html::SimplifiedContext;
use crate::session::Step;

/// Instructions given to prompt-only agents.
pub const BASELINE_PROMPT: &str = r#"<IMPORTANT>
Your task is to predict the next action and provide rationale for the action based on the previous actions and context.
You need to pretend that you are a user, browsing one of the largest e-commerce platforms globally and searching for a product to purchase.
The history action (with details described below) and context will be provided to you.
You need to predict the next action and provide rationale for the action.
</IMPORTANT>


# Action Space

An action is represented in JSON format, and there are four primary types of actions:

#### 1. `type_and_submit`:
Type text into an input field and immediately submit the form. Equivalent to typing text into an input and pressing enter key.

{
    "type": "type_and_submit",
    "name": "input_name",
    "text": "search_text"
}


#### 2. `click`:
Click on a button or clickable element identified by `name`.


{
    "type": "click",
    "name": "clickable_name"
}


#### 3. `terminate`:
When you are unsatisfied with the current search result and you don't want to buy anything, use `terminate` to indicate that you want to close the browser window and terminate the task.

{
    "type": "terminate"
}

# Context
Your context will be an **simplified version** of the raw HTML of the one of the largest e-commerce platforms globally page you are looking at. Some interactable elements will be added a unique "name" attribute, which you can use to identify the element to interact with (click or type_and_submit).

# Rationale

The rationale is a first-person sentence of what you are thinking when you make the action. It should be a short sentence that explains why you are making the action.

# Output Format

You need to predict the next action and provide rationale for the action. Your output should follow a strict JSON form:

{
    "action": {
        // action goes here
        "type": "<type>",
        ...
    },
    "rationale": "<rationale>" // rationale goes here, a string
}

<IMPORTANT>
OUTPUT A SINGLE JSON OBJECT, NOTHING ELSE.
</IMPORTANT>"#;

/// The instructions, then every prior step (context, rationale when known,
/// action), then the current context.
pub fn build_baseline_prompt(history: &[Step], current: &SimplifiedContext) -> String {
    let mut p = String::from(BASELINE_PROMPT);
    p.push_str("\n\n# History\n");
    if history.is_empty() {
        p.push_str("\n(no previous actions)\n");
    }
    for (i, step) in history.iter().enumerate() {
        p.push_str(&format!("\n## Step {}\n### Context\n{}\n", i + 1, step.context.render()));
        if let Some(r) = &step.reasoning {
            p.push_str(&format!("### Rationale\n{}\n", r.as_str()));
        }
        p.push_str(&format!("### Action\n{}\n", step.action.to_json()));
    }
    p.push_str(&format!("\n# Current Context\n{}\n", current.render()));
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::html::simplify;
    use crate::session::{Action, Reasoning, Session};

    #[test]
    fn prompt_sections() {
        let ctx = simplify(r#"<input name="q"><button name="go">Go</button>"#);
        let p = build_baseline_prompt(&[], &ctx);
        assert!(p.starts_with(BASELINE_PROMPT));
        assert!(p.contains("# Action Space"));
        assert!(p.contains("(no previous actions)"));
        assert!(p.ends_with(&format!("# Current Context\n{}\n", ctx.render())));
    }

    #[test]
    fn history_in_order() {
        let ctx = simplify(r#"<input name="q"><button name="go">Go</button>"#);
        let mut s = Session::new("s", "u");
        s.push(ctx.clone(), Action::type_and_submit("q", "socks"));
        s.push(ctx.clone(), Action::click("go"));
        s.steps[1].reasoning = Some(Reasoning::new("Let's go."));
        let p = build_baseline_prompt(&s.steps, &ctx);
        let a = p.find(&s.steps[0].action.to_json()).unwrap();
        let b = p.find(&s.steps[1].action.to_json()).unwrap();
        assert!(a < b);
        assert!(p.contains("### Rationale\nLet's go.\n"));
        assert_eq!(p.matches("### Rationale").count(), 1);
    }
}
