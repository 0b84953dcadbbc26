"""workflowssummary

Sphinx extension that documents the workflows registered by the
speedwagon_clickgraph plugin.

Example:
    ```.. autoworkflow:: Train GraphCM```

Add ``:description:`` to include the workflow description, and
``:notitle:`` to leave out the section title. ``.. workflowlist::`` lists
every workflow of the plugin.
"""

from docutils.parsers.rst import Directive, directives
from docutils import nodes
from sphinx.util import logging
from sphinx import addnodes

from speedwagon_clickgraph.active_workflows import registered_workflows

all_workflows = registered_workflows()


def description_block(workflow):
    block = nodes.line_block()
    for line in workflow.description.split("\n"):
        block += nodes.line(text=line.strip())
    return block


class AutoWorkflowDirective(Directive):
    required_arguments = 1
    optional_arguments = 0
    has_content = True
    final_argument_whitespace = True
    option_spec = {
        'notitle': directives.flag,
        'description': directives.flag
    }

    def run(self):
        workflow = all_workflows.get(self.arguments[0])
        if not workflow:
            self.warning(f"Unable to add {self.arguments[0]}, "
                         f"Only known ones are {', '.join(all_workflows)}")
            return []
        indexnode = addnodes.index(entries=[])
        targetid = nodes.make_id(f"workflow-{workflow.name}")
        section = nodes.section(
            names=[nodes.fully_normalize_name(workflow.name)],
            ids=[targetid]
        )
        if "notitle" not in self.options:
            section.append(
                nodes.title(workflow.name, text=workflow.name, ids=[targetid])
            )
        if "description" in self.options and workflow.description:
            section += description_block(workflow)
        paragraph = nodes.paragraph()
        self.state.nested_parse(self.content, self.content_offset, paragraph)
        section += paragraph
        self.add_name(section)
        indexnode['entries'].append(
            ('single', workflow.name, targetid, '', workflow.name[0]))
        section.append(indexnode)
        return [section]


class WorkflowListDirective(Directive):
    has_content = False
    logger = logging.getLogger(__name__)
    option_spec = {
        'nodescription': directives.flag
    }

    def run(self):
        env = self.state.document.settings.env
        indexnode = addnodes.index(entries=[])
        sections = [indexnode]
        for name in sorted(all_workflows):
            workflow = all_workflows[name]
            targetid = f"workflow-{env.new_serialno('workflow')}"
            indexnode['entries'].append(
                ('single', workflow.name, targetid, '', workflow.name[0]))
            self.logger.verbose(f"Generating entry for {workflow.name}")
            item = nodes.section(
                ids=[targetid],
                names=[nodes.fully_normalize_name(workflow.name)]
            )
            item.append(nodes.title(text=workflow.name, ids=[targetid]))
            if "nodescription" not in self.options and workflow.description:
                item.append(description_block(workflow))
            sections.append(item)
        return sections


def setup(app):
    app.add_directive("workflowlist", WorkflowListDirective)
    app.add_directive("autoworkflow", AutoWorkflowDirective)
    return {
        'version': '0.2',
    }
